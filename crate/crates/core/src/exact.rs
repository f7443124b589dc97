//! Exact Lindblad evolution on the truncated Fock space tensored with one
//! three-level system per molecule.
//!
//! Basis layout: `index = n · 3^N + Σ_m (l_m − 1) · 3^(N−1−m)`, where `n` is
//! the photon number, `l_m ∈ {1, 2, 3}` is the level of molecule `m`, and
//! molecules are ordered left-handed first, then right-handed. The photon
//! number is therefore the most significant digit and molecule 0 the most
//! significant molecular digit.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ggm::CMatrix;
use crate::observables::{summarize_window, PhysicalSeries};
use crate::params::SystemParams;

/// Largest molecule count the exact solver accepts.
pub const MAX_EXACT_MOLECULES: usize = 4;
/// Top Fock-state population that aborts an evolution.
pub const CUTOFF_BREACH_POPULATION: f64 = 1e-4;
/// Trace drift that aborts an evolution.
pub const TRACE_DRIFT_LIMIT: f64 = 1e-6;

const LEVELS: usize = 3;
const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HilbertLayout {
    pub fock_cutoff: usize,
    pub n_left: usize,
    pub n_right: usize,
}

impl HilbertLayout {
    pub fn new(fock_cutoff: usize, n_left: usize, n_right: usize) -> Result<Self> {
        if fock_cutoff < 1 {
            return Err(Error::CutoffTooSmall {
                cutoff: fock_cutoff,
            });
        }
        let requested = n_left + n_right;
        if requested > MAX_EXACT_MOLECULES {
            return Err(Error::TooManyMolecules {
                requested,
                max: MAX_EXACT_MOLECULES,
            });
        }
        Ok(HilbertLayout {
            fock_cutoff,
            n_left,
            n_right,
        })
    }

    /// Layout for `p` with the default cutoff.
    pub fn for_params(p: &SystemParams) -> Result<Self> {
        Self::new(default_cutoff(p), p.n_left, p.n_right)
    }

    pub fn n_molecules(&self) -> usize {
        self.n_left + self.n_right
    }

    pub fn molecule_dims(&self) -> Vec<usize> {
        vec![LEVELS; self.n_molecules()]
    }

    /// Dimension of the molecular factor, `3^N`.
    pub fn molecular_dim(&self) -> usize {
        LEVELS.pow(self.n_molecules() as u32)
    }

    pub fn total_dim(&self) -> usize {
        self.fock_cutoff * self.molecular_dim()
    }

    pub fn photon_number(&self, index: usize) -> usize {
        index / self.molecular_dim()
    }

    /// 1-based level of molecule `m` in basis state `index`.
    pub fn level(&self, index: usize, m: usize) -> usize {
        let stride = LEVELS.pow((self.n_molecules() - 1 - m) as u32);
        (index % self.molecular_dim()) / stride % LEVELS + 1
    }

    pub fn index(&self, photons: usize, levels: &[usize]) -> usize {
        let mol = levels.iter().fold(0, |acc, &l| acc * LEVELS + (l - 1));
        photons * self.molecular_dim() + mol
    }
}

/// Default Fock cutoff: four times the bare-cavity photon number plus one,
/// never below 2.
pub fn default_cutoff(p: &SystemParams) -> usize {
    let bare = if p.kappa > 0.0 || p.delta_c != 0.0 {
        p.bare_cavity_photons()
    } else if p.eta == 0.0 {
        0.0
    } else {
        // undamped resonant drive has no steady amplitude
        8.0
    };
    ((4.0 * (bare + 1.0)).ceil() as usize).max(2)
}

/// Default RK4 step, `0.002 / max rate`.
pub fn default_dt(p: &SystemParams) -> f64 {
    0.002 / p.max_rate().max(f64::MIN_POSITIVE)
}

/// Hamiltonian in compressed sparse row form.
#[derive(Clone, Debug)]
pub struct SparseHamiltonian {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<Complex64>,
}

impl SparseHamiltonian {
    fn from_triplets(dim: usize, mut triplets: Vec<(usize, usize, Complex64)>) -> Self {
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0; dim + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals: Vec<Complex64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
                continue;
            }
            last = Some((r, c));
            row_ptr[r + 1] += 1;
            cols.push(c);
            vals.push(v);
        }
        for r in 0..dim {
            row_ptr[r + 1] += row_ptr[r];
        }
        SparseHamiltonian {
            dim,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, Complex64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[span.clone()]
            .iter()
            .copied()
            .zip(self.vals[span].iter().copied())
    }

    pub fn to_dense(&self) -> CMatrix {
        let mut m = CMatrix::zeros(self.dim, self.dim);
        for r in 0..self.dim {
            for (c, v) in self.row(r) {
                m[(r, c)] += v;
            }
        }
        m
    }
}

/// Builds
/// `H = Δc a†a + Σ_molecules [Δ31 σ33 + (Δ31−Δ32) σ22
///      + (Ω31 σ31 + Ω32 e^{iφ_Q} σ32 + g σ21 a + h.c.)] + η (a† + a)`.
pub fn build_hamiltonian(p: &SystemParams, layout: &HilbertLayout) -> Result<SparseHamiltonian> {
    if layout.n_left != p.n_left || layout.n_right != p.n_right {
        return Err(Error::LengthMismatch {
            expected: p.n_molecules(),
            got: layout.n_molecules(),
        });
    }
    let coupled = p.eta != 0.0 || (p.g != 0.0 && layout.n_molecules() > 0);
    if layout.fock_cutoff < 2 && coupled {
        return Err(Error::CutoffTooSmall {
            cutoff: layout.fock_cutoff,
        });
    }
    let dim = layout.total_dim();
    let nmol = layout.n_molecules();
    let cutoff = layout.fock_cutoff;
    let phases: Vec<Complex64> = (0..nmol)
        .map(|m| {
            let phi = if m < layout.n_left { p.phi_l } else { p.phi_r };
            Complex64::from_polar(1.0, phi)
        })
        .collect();
    let mut triplets = Vec::new();
    let mut levels = vec![0usize; nmol];

    for src in 0..dim {
        let n = layout.photon_number(src);
        for (m, l) in levels.iter_mut().enumerate() {
            *l = layout.level(src, m);
        }
        let mut diag = p.delta_c * n as f64;
        for &l in &levels {
            match l {
                3 => diag += p.delta31,
                2 => diag += p.delta31 - p.delta32,
                _ => {}
            }
        }
        if diag != 0.0 {
            triplets.push((src, src, Complex64::new(diag, 0.0)));
        }
        if p.eta != 0.0 {
            if n + 1 < cutoff {
                let dst = src + layout.molecular_dim();
                triplets.push((dst, src, Complex64::new(p.eta * ((n + 1) as f64).sqrt(), 0.0)));
            }
            if n > 0 {
                let dst = src - layout.molecular_dim();
                triplets.push((dst, src, Complex64::new(p.eta * (n as f64).sqrt(), 0.0)));
            }
        }
        for m in 0..nmol {
            let mut push = |new_level: usize, photons: usize, v: Complex64| {
                if v != ZERO {
                    let mut lv = levels.clone();
                    lv[m] = new_level;
                    triplets.push((layout.index(photons, &lv), src, v));
                }
            };
            match levels[m] {
                1 => {
                    // Ω31 σ31 and g σ21 a
                    push(3, n, Complex64::new(p.omega31, 0.0));
                    if n > 0 {
                        push(2, n - 1, Complex64::new(p.g * (n as f64).sqrt(), 0.0));
                    }
                }
                2 => {
                    // Ω32 e^{iφ} σ32 and g σ12 a†
                    push(3, n, phases[m] * p.omega32);
                    if n + 1 < cutoff {
                        push(1, n + 1, Complex64::new(p.g * ((n + 1) as f64).sqrt(), 0.0));
                    }
                }
                _ => {
                    // Ω31 σ13 and Ω32 e^{-iφ} σ23
                    push(1, n, Complex64::new(p.omega31, 0.0));
                    push(2, n, phases[m].conj() * p.omega32);
                }
            }
        }
    }
    Ok(SparseHamiltonian::from_triplets(dim, triplets))
}

/// Dense operator on the layout's Hilbert space. Used for states and for
/// their time derivatives.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    pub layout: HilbertLayout,
    /// Row-major `total_dim × total_dim` entries.
    pub data: Vec<Complex64>,
}

impl DensityMatrix {
    pub fn zeros(layout: &HilbertLayout) -> Self {
        let d = layout.total_dim();
        DensityMatrix {
            layout: layout.clone(),
            data: vec![ZERO; d * d],
        }
    }

    pub fn dim(&self) -> usize {
        self.layout.total_dim()
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.dim() + c]
    }

    /// Product state `cavity ⊗ mol_0 ⊗ mol_1 ⊗ ...`.
    pub fn product(layout: &HilbertLayout, cavity: &CMatrix, molecules: &[CMatrix]) -> Result<Self> {
        if cavity.nrows() != layout.fock_cutoff {
            return Err(Error::LengthMismatch {
                expected: layout.fock_cutoff,
                got: cavity.nrows(),
            });
        }
        if molecules.len() != layout.n_molecules() {
            return Err(Error::LengthMismatch {
                expected: layout.n_molecules(),
                got: molecules.len(),
            });
        }
        let mut factor = cavity.clone();
        for m in molecules {
            factor = factor.kronecker(m);
        }
        let d = layout.total_dim();
        let mut data = Vec::with_capacity(d * d);
        for r in 0..d {
            for c in 0..d {
                data.push(factor[(r, c)]);
            }
        }
        Ok(DensityMatrix {
            layout: layout.clone(),
            data,
        })
    }

    /// Cavity in vacuum and every molecule in the same state.
    pub fn vacuum_with(layout: &HilbertLayout, molecule: &CMatrix) -> Result<Self> {
        let mut cavity = CMatrix::zeros(layout.fock_cutoff, layout.fock_cutoff);
        cavity[(0, 0)] = Complex64::new(1.0, 0.0);
        Self::product(layout, &cavity, &vec![molecule.clone(); layout.n_molecules()])
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.dim()).map(|i| self.get(i, i)).sum()
    }

    pub fn hermitian_deviation(&self) -> f64 {
        let d = self.dim();
        let mut worst: f64 = 0.0;
        for r in 0..d {
            for c in r..d {
                worst = worst.max((self.get(r, c) - self.get(c, r).conj()).norm());
            }
        }
        worst
    }

    pub fn to_matrix(&self) -> CMatrix {
        CMatrix::from_row_slice(self.dim(), self.dim(), &self.data)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.to_matrix().symmetric_eigenvalues().min()
    }

    /// `Tr(a ρ)`.
    pub fn annihilation_expectation(&self) -> Complex64 {
        let md = self.layout.molecular_dim();
        let mut acc = ZERO;
        for i in md..self.dim() {
            let n = self.layout.photon_number(i);
            // a|i⟩ = √n |i − md⟩, so Tr(aρ) = Σ √n ρ[i, i − md]
            acc += (n as f64).sqrt() * self.get(i, i - md);
        }
        acc
    }

    pub fn photon_moments(&self) -> (f64, f64) {
        let mut mean = 0.0;
        let mut sq = 0.0;
        for i in 0..self.dim() {
            let n = self.layout.photon_number(i) as f64;
            let p = self.get(i, i).re;
            mean += n * p;
            sq += n * n * p;
        }
        (mean, sq)
    }

    pub fn top_fock_population(&self) -> f64 {
        let md = self.layout.molecular_dim();
        let start = (self.layout.fock_cutoff - 1) * md;
        (start..self.dim()).map(|i| self.get(i, i).re).sum()
    }

    /// Reduced 3×3 matrix of molecule `m` (partial trace over everything
    /// else).
    pub fn reduced_molecule(&self, m: usize) -> CMatrix {
        let nmol = self.layout.n_molecules();
        let stride = LEVELS.pow((nmol - 1 - m) as u32);
        let mut out = CMatrix::zeros(LEVELS, LEVELS);
        for i in 0..self.dim() {
            let li = self.layout.level(i, m) - 1;
            let base = i - li * stride;
            for lj in 0..LEVELS {
                let j = base + lj * stride;
                out[(li, lj)] += self.get(i, j);
            }
        }
        out
    }

    /// Level populations `P_1..P_3` of molecule `m`.
    pub fn populations(&self, m: usize) -> [f64; 3] {
        let mut p = [0.0; 3];
        for i in 0..self.dim() {
            p[self.layout.level(i, m) - 1] += self.get(i, i).re;
        }
        p
    }
}

/// Normalized coherent state truncated to `cutoff` Fock levels.
pub fn coherent_state(cutoff: usize, alpha: Complex64) -> CMatrix {
    let mut amps = Vec::with_capacity(cutoff);
    let mut amp = Complex64::new(1.0, 0.0);
    for n in 0..cutoff {
        if n > 0 {
            amp = amp * alpha / (n as f64).sqrt();
        }
        amps.push(amp);
    }
    crate::ggm::pure_state(&amps)
}

/// Lindblad right-hand side
/// `−i[H, ρ] + κ (a ρ a† − ½ a†a ρ − ½ ρ a†a)`.
pub fn lindblad_rhs(p: &SystemParams, h: &SparseHamiltonian, rho: &DensityMatrix) -> DensityMatrix {
    let mut out = DensityMatrix::zeros(&rho.layout);
    lindblad_rhs_into(p.kappa, h, rho, &mut out.data);
    out
}

fn lindblad_rhs_into(kappa: f64, h: &SparseHamiltonian, rho: &DensityMatrix, out: &mut [Complex64]) {
    let d = rho.dim();
    let md = rho.layout.molecular_dim();
    let cutoff = rho.layout.fock_cutoff;
    let x = &rho.data;
    out.iter_mut().for_each(|z| *z = ZERO);
    let minus_i = Complex64::new(0.0, -1.0);

    // −i H ρ
    for r in 0..d {
        let out_row = &mut out[r * d..(r + 1) * d];
        for (k, hv) in h.row(r) {
            let coef = minus_i * hv;
            let src = &x[k * d..(k + 1) * d];
            for (o, s) in out_row.iter_mut().zip(src) {
                *o += coef * s;
            }
        }
    }
    // +i ρ H
    for r in 0..d {
        for k in 0..d {
            let rk = x[r * d + k];
            if rk == ZERO {
                continue;
            }
            let coef = -minus_i * rk;
            for (c, hv) in h.row(k) {
                out[r * d + c] += coef * hv;
            }
        }
    }
    if kappa != 0.0 {
        for r in 0..d {
            let nr = (r / md) as f64;
            let r_up = r + md;
            for c in 0..d {
                let nc = (c / md) as f64;
                let mut v = -0.5 * kappa * (nr + nc) * x[r * d + c];
                let c_up = c + md;
                if r_up / md < cutoff && c_up / md < cutoff {
                    v += kappa * ((nr + 1.0) * (nc + 1.0)).sqrt() * x[r_up * d + c_up];
                }
                out[r * d + c] += v;
            }
        }
    }
}

/// Sampled observables of an exact evolution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservableSeries {
    pub times: Vec<f64>,
    pub photon_mean: Vec<f64>,
    pub photon_sq_mean: Vec<f64>,
    /// `populations[m][i][k]`: molecule `m`, level `i + 1`, sample `k`.
    pub populations: Vec<[Vec<f64>; 3]>,
    /// Largest `|Tr ρ − 1|` seen at any sample.
    pub max_trace_drift: f64,
    /// Largest Hermiticity deviation seen at any sample.
    pub max_hermitian_deviation: f64,
    /// Largest `|Σ_i P_i − 1|` seen at any sample.
    pub max_population_drift: f64,
}

impl ObservableSeries {
    fn new(n_molecules: usize) -> Self {
        ObservableSeries {
            times: Vec::new(),
            photon_mean: Vec::new(),
            photon_sq_mean: Vec::new(),
            populations: vec![[Vec::new(), Vec::new(), Vec::new()]; n_molecules],
            max_trace_drift: 0.0,
            max_hermitian_deviation: 0.0,
            max_population_drift: 0.0,
        }
    }

    fn record(&mut self, t: f64, rho: &DensityMatrix) {
        let (mean, sq) = rho.photon_moments();
        self.times.push(t);
        self.photon_mean.push(mean);
        self.photon_sq_mean.push(sq);
        for (m, slot) in self.populations.iter_mut().enumerate() {
            let pops = rho.populations(m);
            for (series, v) in slot.iter_mut().zip(pops) {
                series.push(v);
            }
            let drift = (pops.iter().sum::<f64>() - 1.0).abs();
            self.max_population_drift = self.max_population_drift.max(drift);
        }
        self.max_trace_drift = self.max_trace_drift.max((rho.trace().re - 1.0).abs());
        self.max_hermitian_deviation = self.max_hermitian_deviation.max(rho.hermitian_deviation());
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Integrator settings for [`evolve`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeSettings {
    pub fock_cutoff: usize,
    pub dt: f64,
    pub t_final: f64,
    pub sample_every: usize,
}

impl MeSettings {
    pub fn defaults(p: &SystemParams, t_final: f64) -> Self {
        MeSettings {
            fock_cutoff: default_cutoff(p),
            dt: default_dt(p),
            t_final,
            sample_every: 1,
        }
    }
}

fn step_count(t_final: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidTimeGrid(format!("dt must be positive, got {dt}")));
    }
    if !(t_final > 0.0) || !t_final.is_finite() {
        return Err(Error::InvalidTimeGrid(format!(
            "t_final must be positive, got {t_final}"
        )));
    }
    Ok(((t_final / dt) - 1e-9).ceil().max(1.0) as usize)
}

/// Fixed-step RK4 integration of the master equation from `rho0`.
///
/// The step is shrunk so that an integer number of steps lands exactly on
/// `t_final`. Observables are recorded at `t = 0`, every `sample_every`
/// steps, and at the final time.
pub fn evolve(
    p: &SystemParams,
    rho0: &DensityMatrix,
    t_final: f64,
    dt: f64,
    sample_every: usize,
) -> Result<ObservableSeries> {
    let p = p.validate()?;
    let n_steps = step_count(t_final, dt)?;
    let dt = t_final / n_steps as f64;
    let sample_every = sample_every.max(1);
    let h = build_hamiltonian(&p, &rho0.layout)?;
    let layout = rho0.layout.clone();

    let mut rho = rho0.clone();
    let mut k = [
        vec![ZERO; rho.data.len()],
        vec![ZERO; rho.data.len()],
        vec![ZERO; rho.data.len()],
        vec![ZERO; rho.data.len()],
    ];
    let mut stage = rho.clone();
    let mut series = ObservableSeries::new(layout.n_molecules());
    series.record(0.0, &rho);

    for step in 1..=n_steps {
        lindblad_rhs_into(p.kappa, &h, &rho, &mut k[0]);
        for (s, (x, d)) in stage.data.iter_mut().zip(rho.data.iter().zip(&k[0])) {
            *s = x + d * (0.5 * dt);
        }
        lindblad_rhs_into(p.kappa, &h, &stage, &mut k[1]);
        for (s, (x, d)) in stage.data.iter_mut().zip(rho.data.iter().zip(&k[1])) {
            *s = x + d * (0.5 * dt);
        }
        lindblad_rhs_into(p.kappa, &h, &stage, &mut k[2]);
        for (s, (x, d)) in stage.data.iter_mut().zip(rho.data.iter().zip(&k[2])) {
            *s = x + d * dt;
        }
        lindblad_rhs_into(p.kappa, &h, &stage, &mut k[3]);
        for (i, x) in rho.data.iter_mut().enumerate() {
            *x += (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]) * (dt / 6.0);
        }

        let t = step as f64 * dt;
        let top = rho.top_fock_population();
        if top > CUTOFF_BREACH_POPULATION {
            return Err(Error::CutoffBreach {
                time: t,
                population: top,
                suggested: 2 * layout.fock_cutoff,
            });
        }
        let drift = (rho.trace().re - 1.0).abs();
        if drift > TRACE_DRIFT_LIMIT {
            return Err(Error::NonPhysical { time: t, drift });
        }
        if step % sample_every == 0 || step == n_steps {
            series.record(t, &rho);
        }
    }
    Ok(series)
}

/// Runs [`evolve`] from cavity vacuum with every molecule in `|3⟩`.
pub fn evolve_from_ground(p: &SystemParams, settings: &MeSettings) -> Result<ObservableSeries> {
    let layout = HilbertLayout::new(settings.fock_cutoff, p.n_left, p.n_right)?;
    let rho0 = DensityMatrix::vacuum_with(&layout, &crate::ggm::pure_level(3, 3))?;
    evolve(p, &rho0, settings.t_final, settings.dt, settings.sample_every)
}

/// Steady photon mean, variance and populations of an exact run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactSteadyState {
    pub photon_mean: f64,
    pub photon_var: f64,
    pub populations: Vec<[f64; 3]>,
}

/// Trailing-window flatness test (`max − min` of the photon mean over the
/// last `window` below `tol · max(mean, 1e−6)`), returning window averages
/// with `var = ⟨(a†a)²⟩ − ⟨a†a⟩²`.
pub fn steady_state_observables(
    series: &ObservableSeries,
    tol: f64,
    window: f64,
) -> Result<ExactSteadyState> {
    let physical = PhysicalSeries::from_exact(series);
    let report = summarize_window(&physical, tol, window)?;
    if !report.converged {
        return Err(Error::NotConverged {
            drift: report.drift,
            threshold: report.threshold,
        });
    }
    Ok(ExactSteadyState {
        photon_mean: report.photon_mean,
        photon_var: report.photon_var,
        populations: report.populations,
    })
}
