//! Stochastic phase-space (GDTWA) dynamics of the cavity and molecules.
//!
//! Each molecule carries the eight expectation values of its qutrit GGMs in
//! the order `(R21, I21, R31, I31, R32, I32, D1, D2)` (note: this is *not*
//! the [`GgmBasis`] order; see [`to_trajectory_order`]). The cavity is a
//! single complex amplitude `α` driven by an additive complex Wiener noise
//! of strength `√κ/2` per quadrature.
//!
//! Drift coefficients follow the mean-field GGM equations. One of the
//! published lines (`dλ^I_{3,2}/dt`) carries `sin φ` on the `Ω32` term where
//! the commutator gives `cos φ`; the commutator form is used here and is
//! pinned by the drift-versus-generator tests.
//!
//! Ensembles are run on a grouped representation: molecules with equal
//! chirality and equal sampled initial vector follow identical
//! deterministic equations (they see the same `α`), so each group is
//! integrated once and weighted by its size. This is exact, and keeps the
//! cost per step bounded by the number of distinct initial vectors rather
//! than the molecule count.

use std::collections::HashMap;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ggm::{CMatrix, GgmBasis, LambdaVector, SamplingTable};
use crate::params::{Chirality, SystemParams};

pub const R21: usize = 0;
pub const I21: usize = 1;
pub const R31: usize = 2;
pub const I31: usize = 3;
pub const R32: usize = 4;
pub const I32: usize = 5;
pub const D1: usize = 6;
pub const D2: usize = 7;

/// GGM expectation values of one molecule, trajectory order.
pub type MoleculeLambdas = [f64; 8];

/// Default `|α|` bound beyond which a trajectory counts as blown up.
pub const DEFAULT_GUARD: f64 = 1e3;
/// Fraction of blown-up trajectories tolerated by [`run_ensemble`].
pub const BLOW_UP_BUDGET: f64 = 1e-3;

const SQRT3: f64 = 1.732_050_807_568_877_2;
/// `GgmBasis` position → trajectory position, for `D = 3`.
const BASIS_TO_TRAJECTORY: [usize; 8] = [R21, R31, R32, I21, I31, I32, D1, D2];
const CHUNK: usize = 64;
const WAVE: usize = 64;

pub fn to_trajectory_order(lam: &LambdaVector) -> Result<MoleculeLambdas> {
    if lam.len() != 8 {
        return Err(Error::LengthMismatch {
            expected: 8,
            got: lam.len(),
        });
    }
    let mut out = [0.0; 8];
    for (b, &t) in BASIS_TO_TRAJECTORY.iter().enumerate() {
        out[t] = lam.0[b];
    }
    Ok(out)
}

pub fn to_basis_order(l: &MoleculeLambdas) -> LambdaVector {
    LambdaVector(BASIS_TO_TRAJECTORY.iter().map(|&t| l[t]).collect())
}

/// Number of real-or-complex unknowns per trajectory, `(D²−1)·N + 1`
/// (the cavity amplitude counted once).
pub fn equation_count(p: &SystemParams) -> usize {
    8 * p.n_molecules() + 1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryState {
    pub lambdas: Vec<MoleculeLambdas>,
    pub alpha: Complex64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StateDerivative {
    pub lambdas: Vec<MoleculeLambdas>,
    pub alpha: Complex64,
}

/// Rates entering the molecular equations for one chirality.
#[derive(Clone, Copy, Debug)]
struct MoleculeRates {
    d31: f64,
    d32: f64,
    g: f64,
    o31: f64,
    o32: f64,
    cos: f64,
    sin: f64,
}

impl MoleculeRates {
    fn new(p: &SystemParams, chirality: Chirality) -> Self {
        let phi = p.loop_phase(chirality);
        MoleculeRates {
            d31: p.delta31,
            d32: p.delta32,
            g: p.g,
            o31: p.omega31,
            o32: p.omega32,
            cos: phi.cos(),
            sin: phi.sin(),
        }
    }

    #[inline]
    fn drift(&self, l: &MoleculeLambdas, alpha: Complex64) -> MoleculeLambdas {
        let (re, im) = (alpha.re, alpha.im);
        let MoleculeRates {
            d31,
            d32,
            g,
            o31,
            o32,
            cos,
            sin,
        } = *self;
        let d21 = d31 - d32;
        let diag_mix = SQRT3 * l[D2] - l[D1];
        [
            d21 * l[I21]
                + 2.0 * g * l[D1] * im
                + o32 * (l[I31] * cos - l[R31] * sin)
                + o31 * l[I32],
            -d21 * l[R21] - 2.0 * g * l[D1] * re - o32 * (l[R31] * cos + l[I31] * sin)
                + o31 * l[R32],
            d31 * l[I31] - g * (l[R32] * im + l[I32] * re) + o32 * (l[R21] * sin + l[I21] * cos),
            -d31 * l[R31] + g * (l[R32] * re - l[I32] * im)
                - o32 * (l[R21] * cos - l[I21] * sin)
                - o31 * (l[D1] + SQRT3 * l[D2]),
            d32 * l[I32] + g * (l[R31] * im - l[I31] * re) + o32 * diag_mix * sin - o31 * l[I21],
            // the published line has sin here; the commutator gives cos
            -d32 * l[R32] + g * (l[R31] * re + l[I31] * im) - o32 * diag_mix * cos - o31 * l[R21],
            -2.0 * g * (l[R21] * im - l[I21] * re)
                + o32 * (l[R32] * sin - l[I32] * cos)
                + o31 * l[I31],
            SQRT3 * o32 * (l[I32] * cos - l[R32] * sin) + SQRT3 * o31 * l[I31],
        ]
    }
}

/// Deterministic part of the cavity equation, given `Σ (λR21 + iλI21)`.
#[derive(Clone, Copy, Debug)]
struct CavityRates {
    decay: Complex64,
    drive: Complex64,
    half_g: f64,
}

impl CavityRates {
    fn new(p: &SystemParams) -> Self {
        CavityRates {
            decay: Complex64::new(0.5 * p.kappa, p.delta_c),
            drive: Complex64::new(0.0, -p.eta),
            half_g: 0.5 * p.g,
        }
    }

    #[inline]
    fn drift(&self, alpha: Complex64, coherence_sum: Complex64) -> Complex64 {
        // −(iΔc + κ/2)α − iη − i(g/2) Σ (λR + iλI)
        -self.decay * alpha + self.drive + Complex64::new(0.0, -self.half_g) * coherence_sum
    }
}

fn chirality_of(p: &SystemParams, m: usize) -> Chirality {
    if m < p.n_left {
        Chirality::Left
    } else {
        Chirality::Right
    }
}

/// Mean-field drift of every molecular vector and of `α` (no noise).
pub fn drift(p: &SystemParams, s: &TrajectoryState) -> Result<StateDerivative> {
    if s.lambdas.len() != p.n_molecules() {
        return Err(Error::LengthMismatch {
            expected: p.n_molecules(),
            got: s.lambdas.len(),
        });
    }
    let rates = [
        MoleculeRates::new(p, Chirality::Left),
        MoleculeRates::new(p, Chirality::Right),
    ];
    let lambdas = s
        .lambdas
        .iter()
        .enumerate()
        .map(|(m, l)| {
            let r = match chirality_of(p, m) {
                Chirality::Left => &rates[0],
                Chirality::Right => &rates[1],
            };
            r.drift(l, s.alpha)
        })
        .collect();
    let coherence_sum: Complex64 = s.lambdas.iter().map(|l| Complex64::new(l[R21], l[I21])).sum();
    Ok(StateDerivative {
        lambdas,
        alpha: CavityRates::new(p).drift(s.alpha, coherence_sum),
    })
}

/// One Euler–Maruyama step: `drift·dt` everywhere plus
/// `(√κ/2)(ξ1 + iξ2)√dt` on `α`, with `ξ1, ξ2` standard normal.
pub fn step<R: Rng + ?Sized>(
    p: &SystemParams,
    s: &TrajectoryState,
    dt: f64,
    rng: &mut R,
) -> Result<TrajectoryState> {
    if !(dt > 0.0) {
        return Err(Error::InvalidTimeGrid(format!("dt must be positive, got {dt}")));
    }
    let d = drift(p, s)?;
    let lambdas = s
        .lambdas
        .iter()
        .zip(&d.lambdas)
        .map(|(l, dl)| std::array::from_fn(|k| l[k] + dl[k] * dt))
        .collect();
    let xi1: f64 = rng.sample(StandardNormal);
    let xi2: f64 = rng.sample(StandardNormal);
    let amp = 0.5 * p.kappa.sqrt() * dt.sqrt();
    let alpha = s.alpha + d.alpha * dt + Complex64::new(xi1, xi2) * amp;
    if !(alpha.norm() <= DEFAULT_GUARD) {
        return Err(Error::BlowUp {
            magnitude: alpha.norm(),
            guard: DEFAULT_GUARD,
        });
    }
    Ok(TrajectoryState { lambdas, alpha })
}

/// Initial optical state of the cavity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CavityState {
    Vacuum,
    Coherent { mean_n: f64, phase: f64 },
}

impl CavityState {
    fn center(&self) -> Complex64 {
        match *self {
            CavityState::Vacuum => Complex64::new(0.0, 0.0),
            CavityState::Coherent { mean_n, phase } => Complex64::from_polar(mean_n.sqrt(), phase),
        }
    }

    /// Draws `α` from the Wigner function: Gaussian around the coherent
    /// amplitude with variance 1/4 per quadrature.
    pub fn sample_alpha<R: Rng + ?Sized>(&self, rng: &mut R) -> Complex64 {
        let x: f64 = rng.sample(StandardNormal);
        let y: f64 = rng.sample(StandardNormal);
        self.center() + Complex64::new(0.5 * x, 0.5 * y)
    }
}

/// Per-molecule discrete sampler for a fixed molecular initial state.
#[derive(Clone, Debug)]
pub struct MoleculeSampler {
    table: SamplingTable,
}

impl MoleculeSampler {
    pub fn new(mol_state: &CMatrix) -> Result<Self> {
        let basis = GgmBasis::new(3)?;
        Ok(MoleculeSampler {
            table: basis.sampling_table(mol_state)?,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> MoleculeLambdas {
        let lam = self.table.sample(rng);
        let mut out = [0.0; 8];
        for (b, &t) in BASIS_TO_TRAJECTORY.iter().enumerate() {
            out[t] = lam.0[b];
        }
        out
    }
}

/// Draws `α(0)` and then every molecule's vector, in layout order.
pub fn sample_initial_trajectory<R: Rng + ?Sized>(
    p: &SystemParams,
    mol_state: &CMatrix,
    cavity: CavityState,
    rng: &mut R,
) -> Result<TrajectoryState> {
    let sampler = MoleculeSampler::new(mol_state)?;
    Ok(sample_with(p, &sampler, cavity, rng))
}

fn sample_with<R: Rng + ?Sized>(
    p: &SystemParams,
    sampler: &MoleculeSampler,
    cavity: CavityState,
    rng: &mut R,
) -> TrajectoryState {
    let alpha = cavity.sample_alpha(rng);
    let lambdas = (0..p.n_molecules()).map(|_| sampler.sample(rng)).collect();
    TrajectoryState { lambdas, alpha }
}

/// Random stream of trajectory `index`: ChaCha8 keyed by `master_seed`,
/// stream number `index`.
pub fn trajectory_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    EulerMaruyama,
    /// Predictor–corrector on the drift, same additive noise increment.
    Heun,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub n_trajectories: usize,
    pub dt: f64,
    pub t_final: f64,
    pub master_seed: u64,
    #[serde(default = "one")]
    pub sample_every: usize,
    #[serde(default = "default_guard")]
    pub guard: f64,
    #[serde(default)]
    pub scheme: Scheme,
}

fn one() -> usize {
    1
}

fn default_guard() -> f64 {
    DEFAULT_GUARD
}

impl EnsembleConfig {
    /// Defaults: `dt = 0.001 / max rate`, Euler–Maruyama, guard `10³`.
    pub fn defaults(p: &SystemParams, n_trajectories: usize, t_final: f64, master_seed: u64) -> Self {
        EnsembleConfig {
            n_trajectories,
            dt: 0.001 / p.max_rate().max(f64::MIN_POSITIVE),
            t_final,
            master_seed,
            sample_every: 1,
            guard: DEFAULT_GUARD,
            scheme: Scheme::EulerMaruyama,
        }
    }

    fn validate(&self) -> Result<usize> {
        if self.n_trajectories == 0 {
            return Err(Error::InvalidTimeGrid("n_trajectories must be >= 1".into()));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidTimeGrid(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_final >= self.dt) || !self.t_final.is_finite() {
            return Err(Error::InvalidTimeGrid(format!(
                "t_final ({}) must be at least dt ({})",
                self.t_final, self.dt
            )));
        }
        Ok(((self.t_final / self.dt) - 1e-9).ceil().max(1.0) as usize)
    }

    /// Step indices at which moments are recorded.
    pub fn sample_steps(&self) -> Result<Vec<usize>> {
        let n_steps = self.validate()?;
        let every = self.sample_every.max(1);
        let mut steps: Vec<usize> = (0..=n_steps).step_by(every).collect();
        if *steps.last().unwrap() != n_steps {
            steps.push(n_steps);
        }
        Ok(steps)
    }
}

/// Trajectory-averaged (symmetric-ordered) moments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WignerMomentSeries {
    pub times: Vec<f64>,
    pub m_alpha: Vec<Complex64>,
    pub m_abs2: Vec<f64>,
    pub m_abs4: Vec<f64>,
    /// Higher moments, used only for the error of the variance estimate.
    pub m_abs6: Vec<f64>,
    pub m_abs8: Vec<f64>,
    /// `lambda_means[m][k][t]`: molecule `m`, component `k` (trajectory
    /// order), sample `t`.
    pub lambda_means: Vec<[Vec<f64>; 8]>,
    pub n_trajectories: usize,
    pub n_effective: usize,
    pub blow_ups: usize,
}

impl WignerMomentSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Standard error of the trajectory mean of `|α|²` at each sample.
    pub fn abs2_stderr(&self) -> Vec<f64> {
        let n = self.n_effective.max(1) as f64;
        self.m_abs2
            .iter()
            .zip(&self.m_abs4)
            .map(|(m2, m4)| ((m4 - m2 * m2).max(0.0) / n).sqrt())
            .collect()
    }
}

/// Molecules of one trajectory collapsed into groups with identical
/// initial vectors.
struct GroupedTrajectory {
    rates: [MoleculeRates; 2],
    cavity: CavityRates,
    chirality: Vec<usize>,
    weight: Vec<f64>,
    lambdas: Vec<MoleculeLambdas>,
    alpha: Complex64,
    // scratch
    k1: Vec<MoleculeLambdas>,
    predictor: Vec<MoleculeLambdas>,
}

impl GroupedTrajectory {
    fn new(p: &SystemParams) -> Self {
        GroupedTrajectory {
            rates: [
                MoleculeRates::new(p, Chirality::Left),
                MoleculeRates::new(p, Chirality::Right),
            ],
            cavity: CavityRates::new(p),
            chirality: Vec::new(),
            weight: Vec::new(),
            lambdas: Vec::new(),
            alpha: Complex64::new(0.0, 0.0),
            k1: Vec::new(),
            predictor: Vec::new(),
        }
    }

    /// Loads a sampled state; `membership[m]` receives the group of
    /// molecule `m`.
    fn load(&mut self, p: &SystemParams, s: &TrajectoryState, membership: &mut Vec<usize>) {
        self.chirality.clear();
        self.weight.clear();
        self.lambdas.clear();
        membership.clear();
        let mut index: HashMap<(usize, [u64; 8]), usize> = HashMap::new();
        for (m, l) in s.lambdas.iter().enumerate() {
            let chir = match chirality_of(p, m) {
                Chirality::Left => 0,
                Chirality::Right => 1,
            };
            let key = (chir, l.map(f64::to_bits));
            let g = *index.entry(key).or_insert_with(|| {
                self.chirality.push(chir);
                self.weight.push(0.0);
                self.lambdas.push(*l);
                self.lambdas.len() - 1
            });
            self.weight[g] += 1.0;
            membership.push(g);
        }
        self.alpha = s.alpha;
        self.k1.resize(self.lambdas.len(), [0.0; 8]);
        self.predictor.resize(self.lambdas.len(), [0.0; 8]);
    }

    fn coherence_sum(&self, lambdas: &[MoleculeLambdas]) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for (w, l) in self.weight.iter().zip(lambdas) {
            acc += Complex64::new(w * l[R21], w * l[I21]);
        }
        acc
    }

    fn advance(&mut self, scheme: Scheme, dt: f64, noise: Complex64) {
        let alpha = self.alpha;
        let dalpha = self.cavity.drift(alpha, self.coherence_sum(&self.lambdas));
        for g in 0..self.lambdas.len() {
            self.k1[g] = self.rates[self.chirality[g]].drift(&self.lambdas[g], alpha);
        }
        match scheme {
            Scheme::EulerMaruyama => {
                for (l, d) in self.lambdas.iter_mut().zip(&self.k1) {
                    for k in 0..8 {
                        l[k] += d[k] * dt;
                    }
                }
                self.alpha = alpha + dalpha * dt + noise;
            }
            Scheme::Heun => {
                for g in 0..self.lambdas.len() {
                    let (l, d) = (&self.lambdas[g], &self.k1[g]);
                    self.predictor[g] = std::array::from_fn(|k| l[k] + d[k] * dt);
                }
                let alpha_p = alpha + dalpha * dt + noise;
                let dalpha_p = self.cavity.drift(alpha_p, self.coherence_sum(&self.predictor));
                for g in 0..self.lambdas.len() {
                    let d2 = self.rates[self.chirality[g]].drift(&self.predictor[g], alpha_p);
                    let (l, d1) = (&mut self.lambdas[g], &self.k1[g]);
                    for k in 0..8 {
                        l[k] += 0.5 * (d1[k] + d2[k]) * dt;
                    }
                }
                self.alpha = alpha + 0.5 * (dalpha + dalpha_p) * dt + noise;
            }
        }
    }
}

/// Moment sums over a set of completed trajectories.
#[derive(Clone, Debug)]
struct MomentSums {
    completed: usize,
    blow_ups: usize,
    alpha: Vec<Complex64>,
    abs2: Vec<f64>,
    abs4: Vec<f64>,
    abs6: Vec<f64>,
    abs8: Vec<f64>,
    /// `[sample][molecule][component]`, flattened.
    lambdas: Vec<f64>,
}

impl MomentSums {
    fn zeros(n_samples: usize, n_mol: usize) -> Self {
        MomentSums {
            completed: 0,
            blow_ups: 0,
            alpha: vec![Complex64::new(0.0, 0.0); n_samples],
            abs2: vec![0.0; n_samples],
            abs4: vec![0.0; n_samples],
            abs6: vec![0.0; n_samples],
            abs8: vec![0.0; n_samples],
            lambdas: vec![0.0; n_samples * n_mol * 8],
        }
    }

    fn merge(&mut self, other: &MomentSums) {
        self.completed += other.completed;
        self.blow_ups += other.blow_ups;
        for (a, b) in self.alpha.iter_mut().zip(&other.alpha) {
            *a += b;
        }
        for (a, b) in self.abs2.iter_mut().zip(&other.abs2) {
            *a += b;
        }
        for (a, b) in self.abs4.iter_mut().zip(&other.abs4) {
            *a += b;
        }
        for (a, b) in self.abs6.iter_mut().zip(&other.abs6) {
            *a += b;
        }
        for (a, b) in self.abs8.iter_mut().zip(&other.abs8) {
            *a += b;
        }
        for (a, b) in self.lambdas.iter_mut().zip(&other.lambdas) {
            *a += b;
        }
    }
}

/// Fixed-shape pairwise reduction; the result depends only on the order of
/// `parts`, never on how they were computed.
fn pairwise_sum(mut parts: Vec<MomentSums>) -> Option<MomentSums> {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                a.merge(&b);
            }
            next.push(a);
        }
        parts = next;
    }
    parts.pop()
}

struct EnsembleSetup<'a> {
    p: &'a SystemParams,
    cfg: &'a EnsembleConfig,
    sampler: MoleculeSampler,
    cavity: CavityState,
    sample_steps: Vec<usize>,
    dt: f64,
}

impl EnsembleSetup<'_> {
    fn run_chunk(&self, chunk: usize) -> MomentSums {
        let n_mol = self.p.n_molecules();
        let n_samples = self.sample_steps.len();
        let mut sums = MomentSums::zeros(n_samples, n_mol);
        let mut traj = GroupedTrajectory::new(self.p);
        let mut membership = Vec::with_capacity(n_mol);
        // per-trajectory buffers, committed only if the trajectory survives
        let mut alpha_buf = vec![Complex64::new(0.0, 0.0); n_samples];
        let mut group_buf: Vec<MoleculeLambdas> = Vec::new();
        let noise_amp = 0.5 * self.p.kappa.sqrt() * self.dt.sqrt();
        let n_steps = *self.sample_steps.last().unwrap();

        let start = chunk * CHUNK;
        let end = (start + CHUNK).min(self.cfg.n_trajectories);
        for index in start..end {
            let mut rng = trajectory_rng(self.cfg.master_seed, index as u64);
            let initial = sample_with(self.p, &self.sampler, self.cavity, &mut rng);
            traj.load(self.p, &initial, &mut membership);
            let n_groups = traj.lambdas.len();
            group_buf.clear();
            group_buf.resize(n_samples * n_groups, [0.0; 8]);

            let mut next_sample = 0;
            let mut ok = true;
            for step in 0..=n_steps {
                if step > 0 {
                    let noise = if noise_amp > 0.0 {
                        let x: f64 = rng.sample(StandardNormal);
                        let y: f64 = rng.sample(StandardNormal);
                        Complex64::new(x, y) * noise_amp
                    } else {
                        Complex64::new(0.0, 0.0)
                    };
                    traj.advance(self.cfg.scheme, self.dt, noise);
                    if !(traj.alpha.norm() <= self.cfg.guard) {
                        ok = false;
                        break;
                    }
                }
                if self.sample_steps[next_sample] == step {
                    alpha_buf[next_sample] = traj.alpha;
                    group_buf[next_sample * n_groups..(next_sample + 1) * n_groups]
                        .copy_from_slice(&traj.lambdas);
                    next_sample += 1;
                }
            }
            if !ok {
                sums.blow_ups += 1;
                continue;
            }
            sums.completed += 1;
            for (k, a) in alpha_buf.iter().enumerate() {
                let a2 = a.norm_sqr();
                sums.alpha[k] += a;
                sums.abs2[k] += a2;
                sums.abs4[k] += a2 * a2;
                sums.abs6[k] += a2 * a2 * a2;
                sums.abs8[k] += a2 * a2 * a2 * a2;
                let groups = &group_buf[k * n_groups..(k + 1) * n_groups];
                let row = &mut sums.lambdas[k * n_mol * 8..(k + 1) * n_mol * 8];
                for (m, &g) in membership.iter().enumerate() {
                    for c in 0..8 {
                        row[m * 8 + c] += groups[g][c];
                    }
                }
            }
        }
        sums
    }
}

/// Evolves `cfg.n_trajectories` independent trajectories and averages the
/// cavity moments and molecular vectors at the sampled times.
///
/// Trajectory `i` draws all of its randomness from
/// [`trajectory_rng`]`(master_seed, i)`, and partial sums are combined in a
/// fixed order, so the result is bitwise independent of the thread count.
pub fn run_ensemble(
    p: &SystemParams,
    cfg: &EnsembleConfig,
    mol_state: &CMatrix,
    cavity: CavityState,
) -> Result<WignerMomentSeries> {
    let p = p.validate()?;
    let sample_steps = cfg.sample_steps()?;
    let n_steps = *sample_steps.last().unwrap();
    let dt = cfg.t_final / n_steps as f64;
    let setup = EnsembleSetup {
        p: &p,
        cfg,
        sampler: MoleculeSampler::new(mol_state)?,
        cavity,
        sample_steps,
        dt,
    };

    let n_chunks = cfg.n_trajectories.div_ceil(CHUNK);
    let mut total: Option<MomentSums> = None;
    for wave_start in (0..n_chunks).step_by(WAVE) {
        let wave_end = (wave_start + WAVE).min(n_chunks);
        let parts: Vec<MomentSums> = (wave_start..wave_end)
            .into_par_iter()
            .map(|c| setup.run_chunk(c))
            .collect();
        if let Some(wave) = pairwise_sum(parts) {
            match total.as_mut() {
                Some(t) => t.merge(&wave),
                None => total = Some(wave),
            }
        }
    }
    let sums = total.expect("at least one trajectory");

    if sums.blow_ups as f64 > BLOW_UP_BUDGET * cfg.n_trajectories as f64 {
        return Err(Error::TooManyBlowUps {
            failed: sums.blow_ups,
            total: cfg.n_trajectories,
        });
    }
    let n = sums.completed.max(1) as f64;
    let n_mol = p.n_molecules();
    let n_samples = setup.sample_steps.len();
    let mut lambda_means = vec![std::array::from_fn(|_| Vec::with_capacity(n_samples)); n_mol];
    for k in 0..n_samples {
        for (m, slot) in lambda_means.iter_mut().enumerate() {
            for (c, series) in slot.iter_mut().enumerate() {
                series.push(sums.lambdas[(k * n_mol + m) * 8 + c] / n);
            }
        }
    }
    Ok(WignerMomentSeries {
        times: setup.sample_steps.iter().map(|&s| s as f64 * dt).collect(),
        m_alpha: sums.alpha.iter().map(|a| a / n).collect(),
        m_abs2: sums.abs2.iter().map(|a| a / n).collect(),
        m_abs4: sums.abs4.iter().map(|a| a / n).collect(),
        m_abs6: sums.abs6.iter().map(|a| a / n).collect(),
        m_abs8: sums.abs8.iter().map(|a| a / n).collect(),
        lambda_means,
        n_trajectories: cfg.n_trajectories,
        n_effective: sums.completed,
        blow_ups: sums.blow_ups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ggm::pure_level;

    fn ground(p: &SystemParams) -> TrajectoryState {
        let mut l = [0.0; 8];
        l[D2] = -2.0 / SQRT3;
        TrajectoryState {
            lambdas: vec![l; p.n_molecules()],
            alpha: Complex64::new(0.0, 0.0),
        }
    }

    #[test]
    fn order_maps_are_inverse() {
        let lam = LambdaVector((0..8).map(|k| k as f64).collect());
        let t = to_trajectory_order(&lam).unwrap();
        assert_eq!(t, [0.0, 3.0, 1.0, 4.0, 2.0, 5.0, 6.0, 7.0]);
        assert_eq!(to_basis_order(&t), lam);
    }

    #[test]
    fn homogeneous_fixed_point() {
        let p = SystemParams::benchmark().with_eta(0.0);
        let s = TrajectoryState {
            lambdas: vec![[0.0; 8]],
            alpha: Complex64::new(0.0, 0.0),
        };
        let d = drift(&p, &s).unwrap();
        assert_eq!(d.lambdas, vec![[0.0; 8]]);
        assert_eq!(d.alpha, Complex64::new(0.0, 0.0));
    }

    #[test]
    fn drive_enters_cavity_only() {
        let p = SystemParams::benchmark().with_eta(2.5);
        let s = TrajectoryState {
            lambdas: vec![[0.0; 8]],
            alpha: Complex64::new(0.0, 0.0),
        };
        let d = drift(&p, &s).unwrap();
        assert_eq!(d.alpha, Complex64::new(0.0, -2.5));
        assert_eq!(d.lambdas, vec![[0.0; 8]]);
    }

    #[test]
    fn level_three_start_drives_i31() {
        let p = SystemParams {
            phi_l: 0.0,
            ..SystemParams::benchmark()
        };
        let d = drift(&p, &ground(&p)).unwrap();
        // −Ω31 (λD1 + √3 λD2) = 2 Ω31
        assert!((d.lambdas[0][I31] - 2.0 * p.omega31).abs() < 1e-15);
        // −Ω32 (√3 λD2 − λD1) cos φ = 2 Ω32 for φ = 0
        assert!((d.lambdas[0][I32] - 2.0 * p.omega32).abs() < 1e-14);
        assert_eq!(d.lambdas[0][R32], 0.0);
    }

    #[test]
    fn equation_count_matches_size() {
        let p = SystemParams::benchmark().with_counts(120, 80);
        assert_eq!(equation_count(&p), 1601);
    }

    #[test]
    fn lossless_step_is_deterministic_euler() {
        let p = SystemParams {
            kappa: 0.0,
            ..SystemParams::benchmark()
        };
        let s0 = ground(&p);
        let mut rng = trajectory_rng(1, 0);
        let s1 = step(&p, &s0, 1e-3, &mut rng).unwrap();
        let d = drift(&p, &s0).unwrap();
        assert_eq!(s1.alpha, s0.alpha + d.alpha * 1e-3);
        for k in 0..8 {
            assert_eq!(s1.lambdas[0][k], s0.lambdas[0][k] + d.lambdas[0][k] * 1e-3);
        }
    }

    #[test]
    fn step_rejects_bad_dt_and_blow_up() {
        let p = SystemParams::benchmark();
        let mut rng = trajectory_rng(1, 0);
        assert!(step(&p, &ground(&p), 0.0, &mut rng).is_err());
        let mut s = ground(&p);
        s.alpha = Complex64::new(2e3, 0.0);
        assert!(matches!(step(&p, &s, 1e-6, &mut rng), Err(Error::BlowUp { .. })));
    }

    #[test]
    fn grouped_integration_matches_per_molecule_euler() {
        let p = SystemParams {
            kappa: 0.0,
            phi_r: 2.0,
            ..SystemParams::benchmark()
        }
        .with_counts(5, 4);
        let mut rng = trajectory_rng(3, 9);
        let s0 =
            sample_initial_trajectory(&p, &pure_level(3, 3), CavityState::Vacuum, &mut rng).unwrap();
        let mut membership = Vec::new();
        let mut grouped = GroupedTrajectory::new(&p);
        grouped.load(&p, &s0, &mut membership);
        assert!(grouped.lambdas.len() < p.n_molecules());
        let mut s = s0.clone();
        for _ in 0..200 {
            s = step(&p, &s, 1e-3, &mut rng).unwrap();
            grouped.advance(Scheme::EulerMaruyama, 1e-3, Complex64::new(0.0, 0.0));
        }
        assert!((s.alpha - grouped.alpha).norm() < 1e-12);
        for (m, &g) in membership.iter().enumerate() {
            for k in 0..8 {
                assert!((s.lambdas[m][k] - grouped.lambdas[g][k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sample_steps_cover_end() {
        let p = SystemParams::benchmark();
        let mut cfg = EnsembleConfig::defaults(&p, 10, 1.0, 0);
        cfg.dt = 0.1;
        cfg.sample_every = 3;
        assert_eq!(cfg.sample_steps().unwrap(), vec![0, 3, 6, 9, 10]);
        cfg.t_final = 0.05;
        assert!(cfg.sample_steps().is_err());
    }

    #[test]
    fn pairwise_sum_is_shape_fixed() {
        let parts: Vec<MomentSums> = (0..5)
            .map(|k| {
                let mut m = MomentSums::zeros(1, 0);
                m.abs2[0] = 0.1 * k as f64;
                m.completed = 1;
                m
            })
            .collect();
        let s = pairwise_sum(parts).unwrap();
        assert_eq!(s.completed, 5);
        assert_eq!(s.abs2[0], ((0.0 + 0.1) + (0.2 + 0.30000000000000004)) + 0.4);
    }
}
