//! Physical observables from either solver, and steady-state detection.
//!
//! Trajectory averages of the Wigner variables are symmetric-ordered
//! moments. For a single mode
//!
//! * `⟨|α|²⟩_W = ⟨a†a⟩ + ½`
//! * `⟨|α|⁴⟩_W = ⟨(a†a)²⟩ + ⟨a†a⟩ + ½`
//!
//! so `⟨(a†a)²⟩ = ⟨|α|⁴⟩_W − ⟨|α|²⟩_W`. Both identities are checked against
//! the exact solver on coherent states in the tests.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::ObservableSeries;
use crate::gdtwa::{MoleculeLambdas, WignerMomentSeries, D1, D2};

const SQRT3: f64 = 1.732_050_807_568_877_2;

/// Allowed fraction of statistically significant negative variances in a
/// steady window.
pub const CLIP_BUDGET: f64 = 0.01;
/// Standard errors of slack added to the flatness threshold for sampled
/// series.
pub const NOISE_SIGMAS: f64 = 6.0;

/// `⟨a†a⟩ = ⟨|α|²⟩_W − ½`.
pub fn photon_mean_from_wigner(m_abs2: f64) -> f64 {
    m_abs2 - 0.5
}

/// `⟨(a†a)²⟩ − ⟨a†a⟩² = (⟨|α|⁴⟩_W − ⟨|α|²⟩_W) − (⟨|α|²⟩_W − ½)²`.
pub fn photon_var_from_wigner(m_abs2: f64, m_abs4: f64) -> Result<f64> {
    // sampled moments can undershoot Jensen by rounding only
    let m2sq = m_abs2 * m_abs2;
    if m_abs4 < m2sq - 1e-12 * m2sq.max(1.0) {
        return Err(Error::JensenViolation {
            m_abs4,
            m_abs2_sq: m2sq,
        });
    }
    let mean = photon_mean_from_wigner(m_abs2);
    Ok((m_abs4 - m_abs2) - mean * mean)
}

/// Diagonal of `ρ = I/3 + ½ Σ λ_μ Λ_μ` for a qutrit, from a trajectory-order
/// vector.
pub fn populations_from_lambdas(l: &MoleculeLambdas) -> [f64; 3] {
    let d1 = l[D1];
    let d2 = l[D2];
    [
        1.0 / 3.0 + 0.5 * (d1 + d2 / SQRT3),
        1.0 / 3.0 + 0.5 * (-d1 + d2 / SQRT3),
        1.0 / 3.0 - d2 / SQRT3,
    ]
}

/// Photon statistics and level populations on a time grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicalSeries {
    pub times: Vec<f64>,
    pub photon_mean: Vec<f64>,
    /// `⟨(a†a)²⟩`.
    pub photon_sq_mean: Vec<f64>,
    /// Variance, clipped at zero.
    pub photon_var: Vec<f64>,
    /// Statistical error of `photon_mean` (zero for exact series).
    pub photon_stderr: Vec<f64>,
    /// Statistical error of `photon_var` (zero for exact series).
    pub var_stderr: Vec<f64>,
    /// `populations[m][i][k]`: molecule `m`, level `i + 1`, sample `k`.
    pub populations: Vec<[Vec<f64>; 3]>,
    /// Number of samples whose variance was clipped.
    pub clipped: usize,
}

impl PhysicalSeries {
    pub fn from_exact(s: &ObservableSeries) -> Self {
        let photon_var: Vec<f64> = s
            .photon_mean
            .iter()
            .zip(&s.photon_sq_mean)
            .map(|(m, sq)| sq - m * m)
            .collect();
        let clipped = photon_var.iter().filter(|&&v| v < 0.0).count();
        PhysicalSeries {
            times: s.times.clone(),
            photon_mean: s.photon_mean.clone(),
            photon_sq_mean: s.photon_sq_mean.clone(),
            photon_var: photon_var.into_iter().map(|v| v.max(0.0)).collect(),
            photon_stderr: vec![0.0; s.len()],
            var_stderr: vec![0.0; s.len()],
            populations: s.populations.clone(),
            clipped,
        }
    }

    pub fn from_wigner(w: &WignerMomentSeries) -> Result<Self> {
        let n = w.n_effective.max(1) as f64;
        let mut out = PhysicalSeries {
            times: w.times.clone(),
            photon_mean: Vec::with_capacity(w.len()),
            photon_sq_mean: Vec::with_capacity(w.len()),
            photon_var: Vec::with_capacity(w.len()),
            photon_stderr: w.abs2_stderr(),
            var_stderr: Vec::with_capacity(w.len()),
            populations: Vec::with_capacity(w.lambda_means.len()),
            clipped: 0,
        };
        for k in 0..w.len() {
            let (m2, m4) = (w.m_abs2[k], w.m_abs4[k]);
            let var = photon_var_from_wigner(m2, m4)?;
            if var < 0.0 {
                out.clipped += 1;
            }
            out.photon_mean.push(photon_mean_from_wigner(m2));
            out.photon_sq_mean.push(m4 - m2);
            out.photon_var.push(var.max(0.0));
            // delta method on f = |α|⁴ − 2 m2 |α|²
            let (m6, m8) = (w.m_abs6[k], w.m_abs8[k]);
            let ef = m4 - 2.0 * m2 * m2;
            let ef2 = m8 - 4.0 * m2 * m6 + 4.0 * m2 * m2 * m4;
            out.var_stderr.push(((ef2 - ef * ef).max(0.0) / n).sqrt());
        }
        for lm in &w.lambda_means {
            let mut pops: [Vec<f64>; 3] = std::array::from_fn(|_| Vec::with_capacity(w.len()));
            for k in 0..w.len() {
                let l: MoleculeLambdas = std::array::from_fn(|c| lm[c][k]);
                for (series, v) in pops.iter_mut().zip(populations_from_lambdas(&l)) {
                    series.push(v);
                }
            }
            out.populations.push(pops);
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn span(&self) -> f64 {
        match (self.times.first(), self.times.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }
}

/// Trailing-window summary of a series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteadyReport {
    pub photon_mean: f64,
    pub photon_var: f64,
    /// Standard error of `photon_mean` at a single time in the window.
    pub photon_stderr: f64,
    pub var_stderr: f64,
    pub populations: Vec<[f64; 3]>,
    /// `max − min` of the photon mean over the window.
    pub drift: f64,
    pub threshold: f64,
    pub window_points: usize,
    pub clipped_in_window: usize,
    pub converged: bool,
}

/// Averages the trailing `window` of `s` and applies the flatness rule
/// `max − min < tol · max(mean, 1e−6) + NOISE_SIGMAS · stderr` without
/// failing on it.
pub fn summarize_window(s: &PhysicalSeries, tol: f64, window: f64) -> Result<SteadyReport> {
    if s.is_empty() || !(window > 0.0) {
        return Err(Error::InvalidTimeGrid("empty series or window".into()));
    }
    if s.span() + 1e-9 < window {
        return Err(Error::InvalidTimeGrid(format!(
            "series spans {:.4} but the window is {:.4}",
            s.span(),
            window
        )));
    }
    let t_end = *s.times.last().unwrap();
    let first = s.times.partition_point(|&t| t < t_end - window - 1e-9);
    let idx = first..s.len();
    let count = idx.len() as f64;
    let avg = |v: &[f64]| v[idx.clone()].iter().sum::<f64>() / count;

    let mean = avg(&s.photon_mean);
    let sq = avg(&s.photon_sq_mean);
    let stderr = avg(&s.photon_stderr);
    let var_stderr = avg(&s.var_stderr);
    let (lo, hi) = s.photon_mean[idx.clone()]
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let drift = hi - lo;
    let threshold = tol * mean.max(1e-6) + NOISE_SIGMAS * stderr;
    let clipped_in_window = idx
        .clone()
        .filter(|&k| {
            let raw = s.photon_sq_mean[k] - s.photon_mean[k] * s.photon_mean[k];
            raw < 0.0 && -raw > 3.0 * s.var_stderr[k]
        })
        .count();
    let populations = s
        .populations
        .iter()
        .map(|p| std::array::from_fn(|i| avg(&p[i])))
        .collect();
    Ok(SteadyReport {
        photon_mean: mean,
        photon_var: (sq - mean * mean).max(0.0),
        photon_stderr: stderr,
        var_stderr,
        populations,
        drift,
        threshold,
        window_points: idx.len(),
        clipped_in_window,
        converged: drift < threshold,
    })
}

/// Declares a steady state when the trailing window is flat, and returns
/// its averages. The series must span at least two windows.
pub fn detect_steady_state(s: &PhysicalSeries, tol: f64, window: f64) -> Result<SteadyReport> {
    if s.span() + 1e-9 < 2.0 * window {
        return Err(Error::InvalidTimeGrid(format!(
            "series spans {:.4}, need at least two windows of {:.4}",
            s.span(),
            window
        )));
    }
    let report = summarize_window(s, tol, window)?;
    check_report(&report)?;
    Ok(report)
}

pub(crate) fn check_report(report: &SteadyReport) -> Result<()> {
    if !report.converged {
        return Err(Error::NotConverged {
            drift: report.drift,
            threshold: report.threshold,
        });
    }
    if report.clipped_in_window as f64 > CLIP_BUDGET * report.window_points as f64 {
        return Err(Error::TooManyClipped {
            clipped: report.clipped_in_window,
            total: report.window_points,
        });
    }
    Ok(())
}
