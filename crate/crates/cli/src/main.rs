mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use enantio_core::analysis::{self, uncertainty_curve};
use enantio_core::exact::{self, coherent_state, DensityMatrix, HilbertLayout};
use enantio_core::gdtwa::{self, CavityState};
use enantio_core::ggm::pure_level;
use enantio_core::io::{self, Table};
use enantio_core::observables::PhysicalSeries;
use enantio_core::Error;
use num_complex::Complex64;
use serde_json::{json, Value};

use config::{Command, ConfigError, Format, Overrides, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "enantio", version, about = "Chiral molecules in a driven lossy cavity")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    overrides: Overrides,
}

enum Failure {
    Config(ConfigError),
    Compute(Error),
    Io(String),
    Validation,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Compute(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

struct Outputs {
    data: PathBuf,
    summary: Value,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation) => ExitCode::from(3),
        Err(Failure::Config(e)) => {
            let mut err = json!({ "error": "config", "message": e.message });
            if let Some(key) = e.missing_key {
                err["missing_key"] = json!(key);
            }
            eprintln!("{err}");
            ExitCode::from(2)
        }
        Err(Failure::Compute(e)) => {
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            ExitCode::from(1)
        }
        Err(Failure::Io(message)) => {
            eprintln!("{}", json!({ "error": "io", "message": message }));
            ExitCode::from(1)
        }
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let o = &cli.overrides;
    let path = o
        .config
        .as_ref()
        .ok_or_else(|| Failure::Config(ConfigError::new("--config is required")))?;
    let mut cfg = RunConfig::load(path).map_err(Failure::Config)?;
    cfg.apply(o);
    cfg.check(cli.command).map_err(Failure::Config)?;
    if let Some(n) = o.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Failure::Config(ConfigError::new(e.to_string())))?;
    }
    let out = o.out.clone().unwrap_or_else(|| {
        PathBuf::from(format!("enantio-{}.{}", cli.command.name(), cfg.format.extension()))
    });
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }

    let start = Instant::now();
    let result = match cli.command {
        Command::Exact => run_exact(&cfg, &out),
        Command::Gdtwa => run_gdtwa(&cfg, &out),
        Command::SweepExcess => run_sweep_excess(&cfg, &out),
        Command::SweepNmol => run_sweep_nmol(&cfg, &out),
        Command::Validate => run_validate(&cfg, &out),
    };
    let (outputs, passed) = match result? {
        Ok(outputs) => (outputs, true),
        Err(ValidateFailed(outputs)) => (outputs, false),
    };

    let manifest = json!({
        "command": cli.command.name(),
        "config": cfg,
        "seed": cfg.run.master_seed,
        "threads": rayon::current_num_threads(),
        "version": env!("CARGO_PKG_VERSION"),
        "wall_time_s": start.elapsed().as_secs_f64(),
        "output": outputs.data,
        "summary": outputs.summary,
    });
    fs::write(manifest_path(&out), serde_json::to_string_pretty(&manifest).unwrap() + "\n")?;
    if passed {
        Ok(())
    } else {
        Err(Failure::Validation)
    }
}

/// A validation report that was written but did not pass.
struct ValidateFailed(Outputs);

type RunResult = Result<Result<Outputs, ValidateFailed>, Failure>;

fn manifest_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "enantio".into());
    out.with_file_name(format!("{stem}.manifest.json"))
}

fn write_table(table: &Table, format: Format, out: &Path) -> Result<(), Failure> {
    let bytes = match format {
        Format::Csv => {
            let mut buf = Vec::new();
            table.write_csv(&mut buf)?;
            buf
        }
        Format::Json => (serde_json::to_string_pretty(&table.to_json()).unwrap() + "\n").into_bytes(),
    };
    fs::write(out, bytes)?;
    Ok(())
}

fn run_exact(cfg: &RunConfig, out: &Path) -> RunResult {
    let p = &cfg.params;
    let mut settings = cfg.run.me_settings(p);
    let series = match cfg.cavity {
        CavityState::Vacuum => exact::evolve_from_ground(p, &settings)?,
        CavityState::Coherent { mean_n, phase } => {
            settings.fock_cutoff = settings
                .fock_cutoff
                .max((4.0 * (mean_n + 1.0)).ceil() as usize);
            let layout = HilbertLayout::new(settings.fock_cutoff, p.n_left, p.n_right)?;
            let cavity = coherent_state(settings.fock_cutoff, Complex64::from_polar(mean_n.sqrt(), phase));
            let molecules = vec![pure_level(3, 3); p.n_molecules()];
            let rho0 = DensityMatrix::product(&layout, &cavity, &molecules)?;
            exact::evolve(p, &rho0, settings.t_final, settings.dt, settings.sample_every)?
        }
    };
    write_table(&io::exact_table(&series), cfg.format, out)?;
    Ok(Ok(Outputs {
        data: out.to_path_buf(),
        summary: json!({
            "fock_cutoff": settings.fock_cutoff,
            "max_trace_drift": series.max_trace_drift,
            "max_hermitian_deviation": series.max_hermitian_deviation,
            "max_population_drift": series.max_population_drift,
        }),
    }))
}

fn run_gdtwa(cfg: &RunConfig, out: &Path) -> RunResult {
    let p = &cfg.params;
    let ens = cfg.run.ensemble_config(p, cfg.run.master_seed);
    let w = gdtwa::run_ensemble(p, &ens, &pure_level(3, 3), cfg.cavity)?;
    let s = PhysicalSeries::from_wigner(&w)?;
    write_table(&io::gdtwa_table(&w, &s), cfg.format, out)?;
    Ok(Ok(Outputs {
        data: out.to_path_buf(),
        summary: json!({
            "dt": ens.dt,
            "n_effective": w.n_effective,
            "blow_ups": w.blow_ups,
            "clipped": s.clipped,
        }),
    }))
}

fn run_sweep_excess(cfg: &RunConfig, out: &Path) -> RunResult {
    let grid = cfg.excess.as_ref().unwrap();
    let s = analysis::sweep_excess(&cfg.params, grid.n_total, &grid.points(), &cfg.run)?;
    let u = uncertainty_curve(&s)?;
    write_table(&io::sweep_table(&s), cfg.format, out)?;
    Ok(Ok(Outputs {
        data: out.to_path_buf(),
        summary: json!({
            "zero_crossing": s.zero_crossing(),
            "min_uncertainty": u.min,
            "min_uncertainty_excess": u.min_excess,
        }),
    }))
}

fn run_sweep_nmol(cfg: &RunConfig, out: &Path) -> RunResult {
    let ns = cfg.n_left.as_ref().unwrap();
    let s = analysis::sweep_molecule_number(&cfg.params, ns, &cfg.run)?;
    write_table(&io::molecule_sweep_table(&s), cfg.format, out)?;
    Ok(Ok(Outputs {
        data: out.to_path_buf(),
        summary: json!({ "zero_crossing": s.zero_crossing() }),
    }))
}

/// Pointwise agreement criterion between the two solvers.
fn allowed_deviation(stderr: f64) -> f64 {
    (5.0 * stderr).max(0.02)
}

fn run_validate(cfg: &RunConfig, out: &Path) -> RunResult {
    let p = &cfg.params;
    let me = exact::evolve_from_ground(p, &cfg.run.me_settings(p))?;
    let ens = cfg.run.ensemble_config(p, cfg.run.master_seed);
    let w = gdtwa::run_ensemble(p, &ens, &pure_level(3, 3), CavityState::Vacuum)?;
    let tw = PhysicalSeries::from_wigner(&w)?;

    let cols = ["t", "photon_exact", "photon_gdtwa", "photon_stderr", "allowed"];
    let mut table = Table::new(cols.map(String::from).to_vec());
    let (mut max_dev, mut sum_dev, mut worst_margin) = (0.0f64, 0.0, f64::NEG_INFINITY);
    let mut j = 0;
    for k in 0..me.len() {
        let t = me.times[k];
        while j < tw.len() && tw.times[j] < t - 1e-9 {
            j += 1;
        }
        if j == tw.len() || (tw.times[j] - t).abs() > 1e-9 {
            continue;
        }
        let dev = (tw.photon_mean[j] - me.photon_mean[k]).abs();
        let allowed = allowed_deviation(tw.photon_stderr[j]);
        max_dev = max_dev.max(dev);
        sum_dev += dev;
        worst_margin = worst_margin.max(dev - allowed);
        table.push(vec![
            t.into(),
            me.photon_mean[k].into(),
            tw.photon_mean[j].into(),
            tw.photon_stderr[j].into(),
            allowed.into(),
        ]);
    }
    let points = table.rows.len();
    if points == 0 {
        return Err(Failure::Compute(Error::InvalidTimeGrid(
            "the two solvers share no sample times; adjust dt or run.sample_interval".into(),
        )));
    }
    let pass = worst_margin <= 0.0;
    let series_path = out.with_file_name(format!(
        "{}.series.{}",
        out.file_stem().unwrap_or_default().to_string_lossy(),
        cfg.format.extension()
    ));
    write_table(&table, cfg.format, &series_path)?;
    let report = json!({
        "verdict": if pass { "pass" } else { "fail" },
        "criterion": "|gdtwa - exact| <= max(5 stderr, 0.02) at every shared time",
        "max_abs_deviation": max_dev,
        "mean_abs_deviation": sum_dev / points as f64,
        "points": points,
        "series": series_path,
    });
    fs::write(out, serde_json::to_string_pretty(&report).unwrap() + "\n")?;
    let outputs = Outputs {
        data: out.to_path_buf(),
        summary: report,
    };
    Ok(if pass { Ok(outputs) } else { Err(ValidateFailed(outputs)) })
}
