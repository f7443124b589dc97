use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Subcommand, ValueEnum};
use enantio_core::analysis::{realizable_grid, Engine, SweepConfig};
use enantio_core::exact::MAX_EXACT_MOLECULES;
use enantio_core::gdtwa::CavityState;
use enantio_core::{Error, SystemParams};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Exact master-equation time series.
    Exact,
    /// Stochastic phase-space ensemble time series.
    Gdtwa,
    /// Steady photon number across enantiomeric excess.
    SweepExcess,
    /// Steady photon number across the number of left-handed molecules.
    SweepNmol,
    /// Compare both solvers on a small instance.
    Validate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Exact => "exact",
            Command::Gdtwa => "gdtwa",
            Command::SweepExcess => "sweep-excess",
            Command::SweepNmol => "sweep-nmol",
            Command::Validate => "validate",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(Clone, Debug, Default, Args)]
pub struct Overrides {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub trajectories: Option<usize>,
    #[arg(long, global = true)]
    pub dt: Option<f64>,
    #[arg(long = "t-final", global = true)]
    pub t_final: Option<f64>,
    /// Output data file; the run manifest is written next to it.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, global = true)]
    pub format: Option<Format>,
    /// Upper bound on worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

/// Realizable excess values `every stride-th in [min, max]` at fixed total.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExcessGrid {
    pub n_total: usize,
    #[serde(default = "default_excess_min")]
    pub min: f64,
    #[serde(default = "default_excess_max")]
    pub max: f64,
    #[serde(default = "one")]
    pub stride: usize,
}

fn default_excess_min() -> f64 {
    -0.9
}

fn default_excess_max() -> f64 {
    0.9
}

fn one() -> usize {
    1
}

impl ExcessGrid {
    pub fn points(&self) -> Vec<f64> {
        realizable_grid(self.n_total, self.min, self.max, self.stride)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub params: SystemParams,
    pub run: SweepConfig,
    #[serde(default = "vacuum")]
    pub cavity: CavityState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub excess: Option<ExcessGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_left: Option<Vec<usize>>,
    #[serde(default = "csv")]
    pub format: Format,
}

fn vacuum() -> CavityState {
    CavityState::Vacuum
}

fn csv() -> Format {
    Format::Csv
}

/// Failure before any computation starts.
#[derive(Debug)]
pub struct ConfigError {
    pub message: String,
    pub missing_key: Option<String>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl ConfigError {
    pub fn new(message: impl Into<String>) -> Self {
        ConfigError {
            message: message.into(),
            missing_key: None,
        }
    }
}

impl From<Error> for ConfigError {
    fn from(e: Error) -> Self {
        ConfigError::new(e.to_string())
    }
}

fn missing_key(message: &str) -> Option<String> {
    let rest = message.split("missing field `").nth(1)?;
    Some(rest.split('`').next()?.to_string())
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new(format!("cannot read {}: {e}", path.display())))?;
        let mut value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| ConfigError::new(format!("{}: {e}", path.display())))?;
        // a run manifest carries its configuration under "config"
        if let Some(inner) = value.get_mut("config") {
            value = inner.take();
        }
        serde_json::from_value(value).map_err(|e| {
            let message = e.to_string();
            ConfigError {
                missing_key: missing_key(&message),
                message,
            }
        })
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.run.master_seed = seed;
        }
        if let Some(n) = o.trajectories {
            self.run.n_trajectories = n;
        }
        if let Some(dt) = o.dt {
            self.run.dt = Some(dt);
        }
        if let Some(t) = o.t_final {
            self.run.t_final = t;
        }
        if let Some(f) = o.format {
            self.format = f;
        }
    }

    /// Command-specific checks that must hold before any compute.
    pub fn check(&mut self, command: Command) -> Result<(), ConfigError> {
        self.params = self.params.validate()?;
        let exact_only = matches!(command, Command::Exact | Command::Validate)
            || (self.run.engine == Engine::ExactMe
                && matches!(command, Command::SweepExcess | Command::SweepNmol));
        match command {
            Command::SweepExcess => {
                let grid = self
                    .excess
                    .as_ref()
                    .ok_or_else(|| missing("excess"))?;
                if exact_only && grid.n_total > MAX_EXACT_MOLECULES {
                    return Err(too_many(grid.n_total));
                }
                if grid.points().len() < 3 {
                    return Err(ConfigError::new("excess grid has fewer than 3 points"));
                }
            }
            Command::SweepNmol => {
                let ns = self.n_left.as_ref().ok_or_else(|| missing("n_left"))?;
                if self.params.n_right != 0 {
                    return Err(ConfigError::new("sweep-nmol needs params.n_right = 0"));
                }
                if let Some(&n) = ns.iter().max().filter(|&&n| exact_only && n > MAX_EXACT_MOLECULES) {
                    return Err(too_many(n));
                }
            }
            _ if exact_only && self.params.n_molecules() > MAX_EXACT_MOLECULES => {
                return Err(too_many(self.params.n_molecules()));
            }
            _ => {}
        }
        if !(self.run.t_final > 0.0) {
            return Err(ConfigError::new("run.t_final must be positive"));
        }
        if self.run.n_trajectories == 0 {
            return Err(ConfigError::new("run.n_trajectories must be at least 1"));
        }
        Ok(())
    }
}

fn missing(key: &str) -> ConfigError {
    ConfigError {
        message: format!("missing field `{key}`"),
        missing_key: Some(key.to_string()),
    }
}

fn too_many(n: usize) -> ConfigError {
    ConfigError::new(
        Error::TooManyMolecules {
            requested: n,
            max: MAX_EXACT_MOLECULES,
        }
        .to_string(),
    )
}
