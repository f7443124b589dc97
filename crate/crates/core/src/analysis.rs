//! Sweeps over enantiomeric excess and molecule number, detection
//! uncertainty and zero-crossing location.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{self, MeSettings, MAX_EXACT_MOLECULES};
use crate::gdtwa::{self, CavityState, EnsembleConfig, Scheme};
use crate::ggm::pure_level;
use crate::observables::{detect_steady_state, PhysicalSeries, SteadyReport};
use crate::params::SystemParams;

/// Slopes below this magnitude give an infinite uncertainty.
pub const MIN_SLOPE: f64 = 1e-12;
/// A minimum counts as a zero when it lies below this many standard errors.
pub const ZERO_FLOOR_SIGMAS: f64 = 3.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    #[default]
    Gdtwa,
    ExactMe,
}

/// Solver and steady-state settings shared by every point of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub engine: Engine,
    pub t_final: f64,
    /// Step size; the engine default is used when absent.
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default = "default_trajectories")]
    pub n_trajectories: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Trailing steady-state window; `2/κ` when absent.
    #[serde(default)]
    pub window: Option<f64>,
    /// Time between recorded samples.
    #[serde(default = "default_sample_interval")]
    pub sample_interval: f64,
    #[serde(default)]
    pub fock_cutoff: Option<usize>,
}

fn default_trajectories() -> usize {
    10_000
}

fn default_tol() -> f64 {
    1e-3
}

fn default_sample_interval() -> f64 {
    0.05
}

impl SweepConfig {
    pub fn new(engine: Engine, t_final: f64) -> Self {
        SweepConfig {
            engine,
            t_final,
            dt: None,
            n_trajectories: default_trajectories(),
            master_seed: 0,
            scheme: Scheme::default(),
            tol: default_tol(),
            window: None,
            sample_interval: default_sample_interval(),
            fock_cutoff: None,
        }
    }

    pub fn window_for(&self, p: &SystemParams) -> f64 {
        self.window.unwrap_or(2.0 / p.kappa.max(f64::MIN_POSITIVE))
    }

    fn sample_every(&self, dt: f64) -> usize {
        ((self.sample_interval / dt).round() as usize).max(1)
    }

    pub fn ensemble_config(&self, p: &SystemParams, seed: u64) -> EnsembleConfig {
        let mut cfg = EnsembleConfig::defaults(p, self.n_trajectories, self.t_final, seed);
        if let Some(dt) = self.dt {
            cfg.dt = dt;
        }
        cfg.sample_every = self.sample_every(cfg.dt);
        cfg.scheme = self.scheme;
        cfg
    }

    pub fn me_settings(&self, p: &SystemParams) -> MeSettings {
        let mut s = MeSettings::defaults(p, self.t_final);
        if let Some(dt) = self.dt {
            s.dt = dt;
        }
        if let Some(nc) = self.fock_cutoff {
            s.fock_cutoff = nc;
        }
        s.sample_every = self.sample_every(s.dt);
        s
    }
}

/// Seed for one composition, independent of the grid it appears in.
pub fn point_seed(master_seed: u64, n_left: usize, n_right: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(((n_left as u64) << 32) | n_right as u64);
    rng.next_u64()
}

/// Runs one composition to steady state with all molecules in `|3⟩` and the
/// cavity in vacuum.
pub fn steady_point(p: &SystemParams, cfg: &SweepConfig) -> Result<(PhysicalSeries, SteadyReport)> {
    let p = p.validate()?;
    let series = match cfg.engine {
        Engine::Gdtwa => {
            let seed = point_seed(cfg.master_seed, p.n_left, p.n_right);
            let ens = cfg.ensemble_config(&p, seed);
            let w = gdtwa::run_ensemble(&p, &ens, &pure_level(3, 3), CavityState::Vacuum)?;
            PhysicalSeries::from_wigner(&w)?
        }
        Engine::ExactMe => {
            let s = exact::evolve_from_ground(&p, &cfg.me_settings(&p))?;
            PhysicalSeries::from_exact(&s)
        }
    };
    let report = detect_steady_state(&series, cfg.tol, cfg.window_for(&p))?;
    Ok((series, report))
}

/// `(N_L, N_R)` for excess `P = (N_R − N_L)/(N_R + N_L)`.
pub fn excess_to_counts(excess: f64, n_total: usize) -> Result<(usize, usize)> {
    let r = (1.0 + excess) * n_total as f64 / 2.0;
    let k = r.round();
    if !(-1.0..=1.0).contains(&excess) || (r - k).abs() > 1e-9 {
        return Err(Error::NonRealizable { excess, n_total });
    }
    let n_right = k as usize;
    Ok((n_total - n_right, n_right))
}

/// Every `stride`-th realizable excess in `[lo, hi]`, anchored on the most
/// balanced composition.
pub fn realizable_grid(n_total: usize, lo: f64, hi: f64, stride: usize) -> Vec<f64> {
    let stride = stride.max(1);
    let anchor = n_total / 2;
    (0..=n_total)
        .filter(|k| k.abs_diff(anchor) % stride == 0)
        .map(|k| (2.0 * k as f64 - n_total as f64) / n_total as f64)
        .filter(|p| *p >= lo - 1e-12 && *p <= hi + 1e-12)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub excess_grid: Vec<f64>,
    pub n_left: Vec<usize>,
    pub n_right: Vec<usize>,
    /// Steady photon number, clipped at zero.
    pub photon_ss: Vec<f64>,
    pub photon_var_ss: Vec<f64>,
    /// Standard error of `photon_ss`; zero for the exact engine.
    pub photon_stderr: Vec<f64>,
    pub uncertainty: Vec<f64>,
    pub n_total: usize,
    pub eta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Uncertainty {
    pub values: Vec<f64>,
    pub argmin: usize,
    pub min_excess: f64,
    pub min: f64,
}

fn run_points(
    template: &SystemParams,
    counts: &[(usize, usize)],
    labels: &[f64],
    cfg: &SweepConfig,
) -> Result<Vec<SteadyReport>> {
    let results: Vec<Result<SteadyReport>> = counts
        .par_iter()
        .zip(labels)
        .map(|(&(nl, nr), &point)| {
            steady_point(&template.clone().with_counts(nl, nr), cfg)
                .map(|(_, r)| r)
                .map_err(|e| Error::AtGridPoint {
                    point,
                    source: Box::new(e),
                })
        })
        .collect();
    results.into_iter().collect()
}

pub fn sweep_excess(
    template: &SystemParams,
    n_total: usize,
    grid: &[f64],
    cfg: &SweepConfig,
) -> Result<SweepResult> {
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidSweep("excess grid must be strictly increasing".into()));
    }
    if cfg.engine == Engine::ExactMe && n_total > MAX_EXACT_MOLECULES {
        return Err(Error::TooManyMolecules {
            requested: n_total,
            max: MAX_EXACT_MOLECULES,
        });
    }
    let counts = grid
        .iter()
        .map(|&p| excess_to_counts(p, n_total))
        .collect::<Result<Vec<_>>>()?;
    let reports = run_points(template, &counts, grid, cfg)?;
    let mut s = SweepResult {
        excess_grid: grid.to_vec(),
        n_left: counts.iter().map(|c| c.0).collect(),
        n_right: counts.iter().map(|c| c.1).collect(),
        photon_ss: reports.iter().map(|r| r.photon_mean.max(0.0)).collect(),
        photon_var_ss: reports.iter().map(|r| r.photon_var).collect(),
        photon_stderr: reports.iter().map(|r| r.photon_stderr).collect(),
        uncertainty: Vec::new(),
        n_total,
        eta: template.eta,
    };
    if grid.len() >= 3 {
        s.uncertainty = uncertainty_curve(&s)?.values;
    }
    Ok(s)
}

/// `ΔP = √var / |∂n/∂P|` with central differences inside the grid and
/// one-sided differences at its ends.
pub fn uncertainty_curve(s: &SweepResult) -> Result<Uncertainty> {
    let x = &s.excess_grid;
    let y = &s.photon_ss;
    let n = x.len();
    if n < 3 {
        return Err(Error::GridTooSmall { needed: 3, got: n });
    }
    let values: Vec<f64> = (0..n)
        .map(|j| {
            let (a, b) = match j {
                0 => (0, 1),
                j if j == n - 1 => (n - 2, n - 1),
                j => (j - 1, j + 1),
            };
            let slope = (y[b] - y[a]) / (x[b] - x[a]);
            if slope.abs() < MIN_SLOPE {
                f64::INFINITY
            } else {
                s.photon_var_ss[j].max(0.0).sqrt() / slope.abs()
            }
        })
        .collect();
    let argmin = (0..n)
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .unwrap();
    Ok(Uncertainty {
        min_excess: x[argmin],
        min: values[argmin],
        argmin,
        values,
    })
}

/// Location of the photon-number zero: the grid minimum refined by a
/// parabola through its neighbours, or `None` if the minimum is not
/// statistically consistent with zero.
pub fn find_zero_crossing(x: &[f64], y: &[f64], stderr: &[f64]) -> Option<f64> {
    if x.is_empty() {
        return None;
    }
    let k = (0..x.len()).min_by(|&a, &b| y[a].total_cmp(&y[b]))?;
    if y[k] >= ZERO_FLOOR_SIGMAS * stderr[k] && y[k] > 0.0 {
        return None;
    }
    if k == 0 || k == x.len() - 1 {
        return Some(x[k]);
    }
    Some(parabola_vertex(
        [x[k - 1], x[k], x[k + 1]],
        [y[k - 1], y[k], y[k + 1]],
    ))
}

/// Vertex of the parabola through three points, kept within the bracket.
pub fn parabola_vertex(x: [f64; 3], y: [f64; 3]) -> f64 {
    let d1 = (y[1] - y[0]) / (x[1] - x[0]);
    let d2 = (y[2] - y[1]) / (x[2] - x[1]);
    let curv = (d2 - d1) / (x[2] - x[0]);
    if curv <= 0.0 {
        return x[1];
    }
    let v = 0.5 * (x[0] + x[1]) - d1 / (2.0 * curv);
    v.clamp(x[0], x[2])
}

impl SweepResult {
    pub fn zero_crossing(&self) -> Option<f64> {
        find_zero_crossing(&self.excess_grid, &self.photon_ss, &self.photon_stderr)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoleculeSweep {
    pub n_left: Vec<usize>,
    pub photon_ss: Vec<f64>,
    pub photon_var_ss: Vec<f64>,
    pub photon_stderr: Vec<f64>,
    pub eta: f64,
}

impl MoleculeSweep {
    pub fn zero_crossing(&self) -> Option<f64> {
        let x: Vec<f64> = self.n_left.iter().map(|&n| n as f64).collect();
        find_zero_crossing(&x, &self.photon_ss, &self.photon_stderr)
    }
}

/// Steady photon number of left-only ensembles.
pub fn sweep_molecule_number(
    template: &SystemParams,
    n_left: &[usize],
    cfg: &SweepConfig,
) -> Result<MoleculeSweep> {
    if template.n_right != 0 {
        return Err(Error::InvalidSweep("template must have n_right = 0".into()));
    }
    if n_left.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidSweep("N_L values must be strictly increasing".into()));
    }
    if cfg.engine == Engine::ExactMe {
        if let Some(&n) = n_left.iter().find(|&&n| n > MAX_EXACT_MOLECULES) {
            return Err(Error::TooManyMolecules {
                requested: n,
                max: MAX_EXACT_MOLECULES,
            });
        }
    }
    let counts: Vec<_> = n_left.iter().map(|&n| (n, 0)).collect();
    let labels: Vec<f64> = n_left.iter().map(|&n| n as f64).collect();
    let reports = run_points(template, &counts, &labels, cfg)?;
    Ok(MoleculeSweep {
        n_left: n_left.to_vec(),
        photon_ss: reports.iter().map(|r| r.photon_mean.max(0.0)).collect(),
        photon_var_ss: reports.iter().map(|r| r.photon_var).collect(),
        photon_stderr: reports.iter().map(|r| r.photon_stderr).collect(),
        eta: template.eta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(x: Vec<f64>, y: Vec<f64>, var: Vec<f64>) -> SweepResult {
        let n = x.len();
        SweepResult {
            excess_grid: x,
            n_left: vec![0; n],
            n_right: vec![0; n],
            photon_ss: y,
            photon_var_ss: var,
            photon_stderr: vec![0.0; n],
            uncertainty: vec![],
            n_total: 0,
            eta: 0.0,
        }
    }

    #[test]
    fn excess_arithmetic() {
        assert_eq!(excess_to_counts(0.0, 200).unwrap(), (100, 100));
        assert_eq!(excess_to_counts(-1.0, 200).unwrap(), (200, 0));
        assert_eq!(excess_to_counts(0.01, 200).unwrap(), (99, 101));
        assert_eq!(excess_to_counts(1.0, 1).unwrap(), (0, 1));
        assert!(matches!(
            excess_to_counts(0.005, 200),
            Err(Error::NonRealizable { .. })
        ));
        assert!(excess_to_counts(1.5, 2).is_err());
    }

    #[test]
    fn grid_is_anchored_on_balance() {
        let g = realizable_grid(200, -0.9, 0.9, 5);
        assert_eq!(g.len(), 37);
        assert!(g.iter().any(|p| p.abs() < 1e-15));
        assert!((g[1] - g[0] - 0.05).abs() < 1e-12);
        for p in &g {
            excess_to_counts(*p, 200).unwrap();
        }
        assert_eq!(realizable_grid(1, -1.0, 1.0, 1), vec![-1.0, 1.0]);
    }

    #[test]
    fn seeds_differ_between_compositions() {
        let a = point_seed(7, 3, 1);
        assert_eq!(a, point_seed(7, 3, 1));
        assert_ne!(a, point_seed(7, 1, 3));
        assert_ne!(a, point_seed(8, 3, 1));
    }

    #[test]
    fn uncertainty_of_a_line() {
        let x: Vec<f64> = (0..7).map(|k| -0.3 + 0.1 * k as f64).collect();
        let y: Vec<f64> = x.iter().map(|p| 2.0 + 4.0 * p).collect();
        let u = uncertainty_curve(&synthetic(x, y, vec![0.25; 7])).unwrap();
        for v in &u.values {
            assert!((v - 0.5 / 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn uncertainty_is_scale_invariant() {
        let x: Vec<f64> = (0..6).map(|k| k as f64 * 0.2).collect();
        let y: Vec<f64> = x.iter().map(|p| 1.0 + p * p).collect();
        let v: Vec<f64> = x.iter().map(|p| 0.5 + p).collect();
        let base = uncertainty_curve(&synthetic(x.clone(), y.clone(), v.clone())).unwrap();
        let c = 3.7;
        let scaled = uncertainty_curve(&synthetic(
            x,
            y.iter().map(|y| c * y).collect(),
            v.iter().map(|v| c * c * v).collect(),
        ))
        .unwrap();
        for (a, b) in base.values.iter().zip(&scaled.values) {
            assert!((a - b).abs() <= 1e-12 * a.abs());
        }
    }

    #[test]
    fn flat_photon_curve_gives_infinite_uncertainty() {
        let s = synthetic(vec![0.0, 0.5, 1.0], vec![1.0; 3], vec![1.0; 3]);
        let u = uncertainty_curve(&s).unwrap();
        assert!(u.values.iter().all(|v| v.is_infinite()));
        assert!(matches!(
            uncertainty_curve(&synthetic(vec![0.0, 1.0], vec![0.0; 2], vec![0.0; 2])),
            Err(Error::GridTooSmall { needed: 3, got: 2 })
        ));
    }

    #[test]
    fn parabola_vertex_recovered() {
        let x: Vec<f64> = (0..11).map(|k| k as f64).collect();
        let y: Vec<f64> = x.iter().map(|x| 0.3 * (x - 4.37).powi(2)).collect();
        let err = vec![1.0; 11];
        let z = find_zero_crossing(&x, &y, &err).unwrap();
        assert!((z - 4.37).abs() < 0.1);
        let y2: Vec<f64> = x.iter().map(|x| 5.0 + (x - 4.0).powi(2)).collect();
        assert_eq!(find_zero_crossing(&x, &y2, &err), None);
    }

    #[test]
    fn exact_engine_is_capped() {
        let cfg = SweepConfig::new(Engine::ExactMe, 1.0);
        let p = SystemParams::benchmark();
        assert!(matches!(
            sweep_excess(&p, 6, &[0.0], &cfg),
            Err(Error::TooManyMolecules { .. })
        ));
        assert!(matches!(
            sweep_molecule_number(&p.clone().with_counts(0, 1), &[1], &cfg),
            Err(Error::InvalidSweep(_))
        ));
    }

    #[test]
    fn grid_point_errors_are_annotated() {
        let mut cfg = SweepConfig::new(Engine::ExactMe, 0.1);
        cfg.window = Some(1.0);
        let err = sweep_excess(&SystemParams::benchmark(), 2, &[-1.0, 0.0], &cfg).unwrap_err();
        assert!(matches!(err, Error::AtGridPoint { point, .. } if point == -1.0));
    }

    #[test]
    fn config_json_defaults() {
        let c: SweepConfig = serde_json::from_str(r#"{"t_final": 20.0}"#).unwrap();
        assert_eq!(c.engine, Engine::Gdtwa);
        assert_eq!(c.n_trajectories, 10_000);
        assert!(serde_json::from_str::<SweepConfig>(r#"{"t_final": 1, "bogus": 2}"#).is_err());
    }
}
