#![allow(dead_code)]

use enantio_core::exact::{build_hamiltonian, coherent_state, lindblad_rhs, DensityMatrix, HilbertLayout};
use enantio_core::gdtwa::{to_trajectory_order, MoleculeLambdas, TrajectoryState};
use enantio_core::ggm::{pure_state, CMatrix, GgmBasis, LambdaVector};
use enantio_core::SystemParams;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

pub const ORACLE_CUTOFF: usize = 30;

pub fn random_pure_state<R: Rng>(rng: &mut R) -> CMatrix {
    let psi: Vec<Complex64> = (0..3)
        .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect();
    let norm = psi.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    let psi: Vec<Complex64> = psi.iter().map(|c| c / norm).collect();
    pure_state(&psi)
}

pub fn random_params<R: Rng>(rng: &mut R, n_left: usize, n_right: usize) -> SystemParams {
    let mut u = |a: f64, b: f64| rng.random_range(a..b);
    SystemParams {
        g: u(0.5, 2.0),
        omega31: u(-3.0, 3.0),
        omega32: u(-6.0, 6.0),
        delta_c: u(-2.0, 2.0),
        delta31: u(-2.0, 2.0),
        delta32: u(-2.0, 2.0),
        kappa: u(0.0, 6.0),
        eta: u(-5.0, 5.0),
        phi_l: u(0.0, std::f64::consts::TAU),
        phi_r: u(0.0, std::f64::consts::TAU),
        n_left,
        n_right,
    }
}

/// Time derivative of every molecular vector and of `⟨a⟩` obtained from the
/// full master-equation generator at a product of a coherent cavity state
/// and the given molecular states.
pub fn generator_drift(
    p: &SystemParams,
    alpha: Complex64,
    molecules: &[CMatrix],
) -> (Vec<MoleculeLambdas>, Complex64) {
    let layout = HilbertLayout::new(ORACLE_CUTOFF, p.n_left, p.n_right).unwrap();
    let rho = DensityMatrix::product(&layout, &coherent_state(ORACLE_CUTOFF, alpha), molecules).unwrap();
    let h = build_hamiltonian(p, &layout).unwrap();
    let d = lindblad_rhs(p, &h, &rho);
    let basis = GgmBasis::new(3).unwrap();
    let lambdas = (0..molecules.len())
        .map(|m| {
            let red = d.reduced_molecule(m);
            let v = (0..basis.len())
                .map(|mu| (basis.matrix(mu) * &red).trace().re)
                .collect();
            to_trajectory_order(&LambdaVector(v)).unwrap()
        })
        .collect();
    (lambdas, d.annihilation_expectation())
}

/// Trajectory state holding the exact expectations of the product state.
pub fn mean_field_state(alpha: Complex64, molecules: &[CMatrix]) -> TrajectoryState {
    let basis = GgmBasis::new(3).unwrap();
    TrajectoryState {
        lambdas: molecules
            .iter()
            .map(|m| to_trajectory_order(&basis.expectations(m).unwrap()).unwrap())
            .collect(),
        alpha,
    }
}

pub fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * b.abs().max(1.0)
}

/// Sample mean and standard error of the mean.
pub fn mean_stderr(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}
