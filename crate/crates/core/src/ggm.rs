//! Generalized Gell-Mann matrices for a `D`-level system.
//!
//! Basis order is fixed: all symmetric `Λ^R_{α,β}`, then all antisymmetric
//! `Λ^I_{α,β}`, each in lexicographic `(α, β)` order with `β < α`, then the
//! diagonal `Λ^D_1 .. Λ^D_{D-1}`. For `D = 3` this gives
//! `(R21, R31, R32, I21, I31, I32, D1, D2)`.
//!
//! The normalization is `Tr(Λ_μ Λ_ν) = 2 δ_μν`, so a density matrix expands as
//! `ρ = I/D + ½ Σ_μ λ_μ Λ_μ` with `λ_μ = Tr(Λ_μ ρ)`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;

const HERMITIAN_TOL: f64 = 1e-10;
const TRACE_TOL: f64 = 1e-10;
const PSD_TOL: f64 = 1e-10;
const DEGENERACY_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GgmKind {
    /// `|β⟩⟨α| + |α⟩⟨β|`; levels are 1-based.
    Symmetric { alpha: usize, beta: usize },
    /// `-i(|β⟩⟨α| - |α⟩⟨β|)`.
    Antisymmetric { alpha: usize, beta: usize },
    /// `sqrt(2/(α(α+1))) (Σ_{β≤α} |β⟩⟨β| - α |α+1⟩⟨α+1|)`.
    Diagonal { alpha: usize },
}

/// One eigenpair of a basis element.
#[derive(Clone, Debug)]
pub struct Eigenpair {
    pub value: f64,
    pub vector: Vec<Complex64>,
}

#[derive(Clone, Debug)]
pub struct GgmElement {
    pub kind: GgmKind,
    pub matrix: CMatrix,
    pub eigenpairs: Vec<Eigenpair>,
}

#[derive(Clone, Debug)]
pub struct GgmBasis {
    dim: usize,
    elements: Vec<GgmElement>,
}

/// Expectation values `λ_μ = ⟨Λ_μ⟩` of one `D`-level system.
#[derive(Clone, Debug, PartialEq)]
pub struct LambdaVector(pub Vec<f64>);

impl LambdaVector {
    pub fn zeros(len: usize) -> Self {
        LambdaVector(vec![0.0; len])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn basis_vector(dim: usize, level: usize, amp: Complex64) -> Vec<Complex64> {
    let mut v = vec![Complex64::new(0.0, 0.0); dim];
    v[level - 1] = amp;
    v
}

fn complement_eigenpairs(dim: usize, skip: &[usize]) -> impl Iterator<Item = Eigenpair> + '_ {
    (1..=dim).filter(move |k| !skip.contains(k)).map(move |k| Eigenpair {
        value: 0.0,
        vector: basis_vector(dim, k, Complex64::new(1.0, 0.0)),
    })
}

impl GgmBasis {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::DimensionTooSmall(dim));
        }
        let one = Complex64::new(1.0, 0.0);
        let i = Complex64::new(0.0, 1.0);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let mut elements = Vec::with_capacity(dim * dim - 1);

        for alpha in 1..=dim {
            for beta in 1..alpha {
                let mut m = CMatrix::zeros(dim, dim);
                m[(beta - 1, alpha - 1)] = one;
                m[(alpha - 1, beta - 1)] = one;
                let mut plus = basis_vector(dim, alpha, one * h);
                plus[beta - 1] = one * h;
                let mut minus = basis_vector(dim, alpha, one * h);
                minus[beta - 1] = -one * h;
                let mut eigenpairs = vec![
                    Eigenpair { value: 1.0, vector: plus },
                    Eigenpair { value: -1.0, vector: minus },
                ];
                eigenpairs.extend(complement_eigenpairs(dim, &[alpha, beta]));
                elements.push(GgmElement {
                    kind: GgmKind::Symmetric { alpha, beta },
                    matrix: m,
                    eigenpairs,
                });
            }
        }
        for alpha in 1..=dim {
            for beta in 1..alpha {
                let mut m = CMatrix::zeros(dim, dim);
                m[(beta - 1, alpha - 1)] = -i;
                m[(alpha - 1, beta - 1)] = i;
                // (|α⟩ ∓ i|β⟩)/√2 has eigenvalue ±1
                let mut plus = basis_vector(dim, alpha, one * h);
                plus[beta - 1] = -i * h;
                let mut minus = basis_vector(dim, alpha, one * h);
                minus[beta - 1] = i * h;
                let mut eigenpairs = vec![
                    Eigenpair { value: 1.0, vector: plus },
                    Eigenpair { value: -1.0, vector: minus },
                ];
                eigenpairs.extend(complement_eigenpairs(dim, &[alpha, beta]));
                elements.push(GgmElement {
                    kind: GgmKind::Antisymmetric { alpha, beta },
                    matrix: m,
                    eigenpairs,
                });
            }
        }
        for alpha in 1..dim {
            let norm = (2.0 / (alpha * (alpha + 1)) as f64).sqrt();
            let diag: Vec<f64> = (1..=dim)
                .map(|k| {
                    if k <= alpha {
                        norm
                    } else if k == alpha + 1 {
                        -(alpha as f64) * norm
                    } else {
                        0.0
                    }
                })
                .collect();
            let m = CMatrix::from_fn(dim, dim, |r, c| {
                if r == c {
                    Complex64::new(diag[r], 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            });
            let eigenpairs = diag
                .iter()
                .enumerate()
                .map(|(k, &value)| Eigenpair {
                    value,
                    vector: basis_vector(dim, k + 1, one),
                })
                .collect();
            elements.push(GgmElement {
                kind: GgmKind::Diagonal { alpha },
                matrix: m,
                eigenpairs,
            });
        }

        Ok(GgmBasis { dim, elements })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn elements(&self) -> &[GgmElement] {
        &self.elements
    }

    pub fn matrix(&self, mu: usize) -> &CMatrix {
        &self.elements[mu].matrix
    }

    pub fn index_of(&self, kind: GgmKind) -> Option<usize> {
        self.elements.iter().position(|e| e.kind == kind)
    }

    /// `ρ = (1/D)(I + Σ_μ (D/2) λ_μ Λ_μ)`.
    ///
    /// The result is Hermitian with unit trace but need not be positive.
    pub fn expand_density(&self, lam: &LambdaVector) -> Result<CMatrix> {
        if lam.len() != self.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                got: lam.len(),
            });
        }
        let d = self.dim as f64;
        let mut rho = CMatrix::identity(self.dim, self.dim) / Complex64::new(d, 0.0);
        for (e, &l) in self.elements.iter().zip(lam.as_slice()) {
            rho += &e.matrix * Complex64::new(0.5 * l, 0.0);
        }
        Ok(rho)
    }

    /// `λ_μ = Tr(Λ_μ ρ)` for a Hermitian, unit-trace `ρ`.
    pub fn expectations(&self, rho: &CMatrix) -> Result<LambdaVector> {
        check_density(rho, self.dim)?;
        Ok(LambdaVector(
            self.elements
                .iter()
                .map(|e| trace_product(&e.matrix, rho).re)
                .collect(),
        ))
    }

    /// Discrete Wigner sampling: for each `μ` independently, pick eigenvalue
    /// `λ_a` of `Λ_μ` with probability `⟨η_a|ρ0|η_a⟩`. Degenerate
    /// eigenvalues are merged before drawing.
    pub fn sample_initial_lambdas<R: Rng + ?Sized>(
        &self,
        rho0: &CMatrix,
        rng: &mut R,
    ) -> Result<LambdaVector> {
        let table = self.sampling_table(rho0)?;
        Ok(table.sample(rng))
    }

    /// Precomputes the per-element outcome distributions for `rho0`.
    pub fn sampling_table(&self, rho0: &CMatrix) -> Result<SamplingTable> {
        check_density(rho0, self.dim)?;
        let min_eig = rho0.clone().symmetric_eigenvalues().min();
        if min_eig < -PSD_TOL {
            return Err(Error::InvalidState(min_eig));
        }
        let outcomes = self
            .elements
            .iter()
            .map(|e| {
                let mut merged: Vec<(f64, f64)> = Vec::new();
                for pair in &e.eigenpairs {
                    let p = quadratic_form(rho0, &pair.vector).max(0.0);
                    match merged
                        .iter_mut()
                        .find(|(v, _)| (v - pair.value).abs() < DEGENERACY_TOL)
                    {
                        Some(slot) => slot.1 += p,
                        None => merged.push((pair.value, p)),
                    }
                }
                let total: f64 = merged.iter().map(|(_, p)| p).sum();
                let mut cumulative = 0.0;
                merged
                    .into_iter()
                    .filter(|&(_, p)| p > 0.0)
                    .map(|(v, p)| {
                        cumulative += p / total;
                        (v, cumulative)
                    })
                    .collect()
            })
            .collect();
        Ok(SamplingTable { outcomes })
    }
}

/// Cumulative outcome tables for each basis element.
#[derive(Clone, Debug)]
pub struct SamplingTable {
    outcomes: Vec<Vec<(f64, f64)>>,
}

impl SamplingTable {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> LambdaVector {
        LambdaVector(
            self.outcomes
                .iter()
                .map(|table| match table.as_slice() {
                    [(only, _)] => *only,
                    _ => {
                        let u: f64 = rng.random();
                        table
                            .iter()
                            .find(|&&(_, c)| u < c)
                            .or(table.last())
                            .map(|&(v, _)| v)
                            .unwrap_or(0.0)
                    }
                })
                .collect(),
        )
    }

    /// Outcomes and their probabilities for element `mu`.
    pub fn distribution(&self, mu: usize) -> Vec<(f64, f64)> {
        let mut prev = 0.0;
        self.outcomes[mu]
            .iter()
            .map(|&(v, c)| {
                let p = c - prev;
                prev = c;
                (v, p)
            })
            .collect()
    }
}

fn trace_product(a: &CMatrix, b: &CMatrix) -> Complex64 {
    let n = a.nrows();
    let mut acc = Complex64::new(0.0, 0.0);
    for r in 0..n {
        for c in 0..n {
            acc += a[(r, c)] * b[(c, r)];
        }
    }
    acc
}

fn quadratic_form(m: &CMatrix, v: &[Complex64]) -> f64 {
    let n = m.nrows();
    let mut acc = Complex64::new(0.0, 0.0);
    for r in 0..n {
        for c in 0..n {
            acc += v[r].conj() * m[(r, c)] * v[c];
        }
    }
    acc.re
}

/// Largest `|m - m†|` entry.
pub fn hermitian_deviation(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut worst: f64 = 0.0;
    for r in 0..n {
        for c in r..n {
            worst = worst.max((m[(r, c)] - m[(c, r)].conj()).norm());
        }
    }
    worst
}

fn check_density(rho: &CMatrix, dim: usize) -> Result<()> {
    if rho.nrows() != dim || rho.ncols() != dim {
        return Err(Error::LengthMismatch {
            expected: dim,
            got: rho.nrows(),
        });
    }
    let asym = hermitian_deviation(rho);
    if asym > HERMITIAN_TOL {
        return Err(Error::NonHermitian(asym));
    }
    let tr = rho.trace().re;
    if (tr - 1.0).abs() > TRACE_TOL {
        return Err(Error::TraceNotOne(tr));
    }
    Ok(())
}

/// `|k⟩⟨k|` for a 1-based level `k`.
pub fn pure_level(dim: usize, level: usize) -> CMatrix {
    let mut m = CMatrix::zeros(dim, dim);
    m[(level - 1, level - 1)] = Complex64::new(1.0, 0.0);
    m
}

/// `|ψ⟩⟨ψ|` for a normalized copy of `psi`.
pub fn pure_state(psi: &[Complex64]) -> CMatrix {
    let norm = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let n = psi.len();
    CMatrix::from_fn(n, n, |r, c| psi[r] * psi[c].conj() / (norm * norm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const S3: f64 = 1.732_050_807_568_877_2;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn too_small_dimension() {
        assert_eq!(GgmBasis::new(1).unwrap_err(), Error::DimensionTooSmall(1));
    }

    #[test]
    fn qutrit_basis_order_and_diagonals() {
        let b = GgmBasis::new(3).unwrap();
        assert_eq!(b.len(), 8);
        let kinds: Vec<_> = b.elements().iter().map(|e| e.kind).collect();
        assert_eq!(kinds[0], GgmKind::Symmetric { alpha: 2, beta: 1 });
        assert_eq!(kinds[2], GgmKind::Symmetric { alpha: 3, beta: 2 });
        assert_eq!(kinds[3], GgmKind::Antisymmetric { alpha: 2, beta: 1 });
        assert_eq!(kinds[7], GgmKind::Diagonal { alpha: 2 });
        let d1 = b.matrix(6);
        let d2 = b.matrix(7);
        for (k, want) in [1.0, -1.0, 0.0].iter().enumerate() {
            assert!((d1[(k, k)].re - want).abs() < 1e-15);
        }
        for (k, want) in [1.0 / S3, 1.0 / S3, -2.0 / S3].iter().enumerate() {
            assert!((d2[(k, k)].re - want).abs() < 1e-15);
        }
    }

    #[test]
    fn qubit_basis_is_pauli() {
        let b = GgmBasis::new(2).unwrap();
        let sx = CMatrix::from_row_slice(2, 2, &[c(0., 0.), c(1., 0.), c(1., 0.), c(0., 0.)]);
        let sy = CMatrix::from_row_slice(2, 2, &[c(0., 0.), c(0., -1.), c(0., 1.), c(0., 0.)]);
        let sz = CMatrix::from_row_slice(2, 2, &[c(1., 0.), c(0., 0.), c(0., 0.), c(-1., 0.)]);
        assert_eq!(b.matrix(0), &sx);
        assert_eq!(b.matrix(1), &sy);
        assert_eq!(b.matrix(2), &sz);
    }

    #[test]
    fn eigenpairs_are_correct_and_orthonormal() {
        for dim in 2..=5 {
            let b = GgmBasis::new(dim).unwrap();
            for e in b.elements() {
                assert_eq!(e.eigenpairs.len(), dim);
                for p in &e.eigenpairs {
                    let v = nalgebra::DVector::from_vec(p.vector.clone());
                    let mv = &e.matrix * &v;
                    assert!((mv - &v * c(p.value, 0.0)).norm() < 1e-14);
                }
                for (i, p) in e.eigenpairs.iter().enumerate() {
                    for (j, q) in e.eigenpairs.iter().enumerate() {
                        let dot: Complex64 =
                            p.vector.iter().zip(&q.vector).map(|(a, b)| a.conj() * b).sum();
                        let want = if i == j { 1.0 } else { 0.0 };
                        assert!((dot - c(want, 0.0)).norm() < 1e-14);
                    }
                }
            }
        }
    }

    #[test]
    fn second_diagonal_spectrum() {
        let b = GgmBasis::new(3).unwrap();
        let mut vals: Vec<f64> = b.elements()[7].eigenpairs.iter().map(|p| p.value).collect();
        vals.sort_by(f64::total_cmp);
        assert!((vals[0] + 2.0 / S3).abs() < 1e-15);
        assert!((vals[1] - 1.0 / S3).abs() < 1e-15);
        assert!((vals[2] - 1.0 / S3).abs() < 1e-15);
    }

    #[test]
    fn expansion_of_known_states() {
        let b = GgmBasis::new(3).unwrap();
        let mixed = b.expand_density(&LambdaVector::zeros(8)).unwrap();
        assert!((mixed - CMatrix::identity(3, 3) * c(1.0 / 3.0, 0.0)).norm() < 1e-15);

        let mut lam = LambdaVector::zeros(8);
        lam.0[7] = -2.0 / S3;
        let rho = b.expand_density(&lam).unwrap();
        assert!((rho - pure_level(3, 3)).norm() < 1e-15);

        assert_eq!(
            b.expand_density(&LambdaVector::zeros(3)).unwrap_err(),
            Error::LengthMismatch { expected: 8, got: 3 }
        );
    }

    #[test]
    fn expectations_of_known_states() {
        let b = GgmBasis::new(3).unwrap();
        let mixed = CMatrix::identity(3, 3) * c(1.0 / 3.0, 0.0);
        assert!(b.expectations(&mixed).unwrap().0.iter().all(|l| l.abs() < 1e-15));

        let l3 = b.expectations(&pure_level(3, 3)).unwrap();
        assert!((l3.0[7] + 2.0 / S3).abs() < 1e-15);
        assert!(l3.0[..7].iter().all(|l| l.abs() < 1e-15));

        let l1 = b.expectations(&pure_level(3, 1)).unwrap();
        assert!((l1.0[6] - 1.0).abs() < 1e-15);
        assert!((l1.0[7] - 1.0 / S3).abs() < 1e-15);
        assert!(l1.0[..6].iter().all(|l| l.abs() < 1e-15));
    }

    #[test]
    fn expectations_reject_bad_input() {
        let b = GgmBasis::new(3).unwrap();
        let mut m = pure_level(3, 1);
        m[(0, 1)] = c(0.1, 0.0);
        assert!(matches!(b.expectations(&m), Err(Error::NonHermitian(_))));
        let m = pure_level(3, 1) * c(2.0, 0.0);
        assert!(matches!(b.expectations(&m), Err(Error::TraceNotOne(_))));
    }

    #[test]
    fn sampling_an_eigenstate() {
        let b = GgmBasis::new(3).unwrap();
        let table = b.sampling_table(&pure_level(3, 3)).unwrap();
        let d2 = table.distribution(7);
        assert_eq!(d2.len(), 1);
        assert!((d2[0].0 + 2.0 / S3).abs() < 1e-15);
        assert!((d2[0].1 - 1.0).abs() < 1e-15);
        // Λ^R_{3,1}: eigenvectors (|3⟩ ± |1⟩)/√2 each overlap |3⟩ with weight ½
        let r31 = table.distribution(1);
        assert_eq!(r31.len(), 2);
        for (v, p) in r31 {
            assert!(v == 1.0 || v == -1.0);
            assert!((p - 0.5).abs() < 1e-15);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let lam = b.sample_initial_lambdas(&pure_level(3, 3), &mut rng).unwrap();
            assert_eq!(lam.0[7], b.elements()[7].eigenpairs[2].value);
            assert_eq!(lam.0[0], 0.0);
            assert!(lam.0[1].abs() == 1.0);
        }
    }

    #[test]
    fn sampling_rejects_negative_states() {
        let b = GgmBasis::new(3).unwrap();
        let mut lam = LambdaVector::zeros(8);
        lam.0[6] = 2.0;
        let rho = b.expand_density(&lam).unwrap();
        assert!(matches!(
            b.sampling_table(&rho),
            Err(Error::InvalidState(v)) if v < 0.0
        ));
    }
}
