//! Model parameters shared by the exact and stochastic solvers.
//!
//! Every rate and detuning is a dimensionless multiple of the cavity
//! coupling `g`, and times are in units of `1/g`.

use std::f64::consts::{PI, TAU};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Handedness of a molecule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Chirality {
    Left,
    Right,
}

impl fmt::Display for Chirality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Chirality::Left => write!(f, "L"),
            Chirality::Right => write!(f, "R"),
        }
    }
}

/// Parameters of the time-independent cavity-molecule Hamiltonian and the
/// cavity loss rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemParams {
    #[serde(default = "unit_coupling")]
    pub g: f64,
    pub omega31: f64,
    pub omega32: f64,
    pub delta_c: f64,
    pub delta31: f64,
    pub delta32: f64,
    pub kappa: f64,
    /// Signed cavity drive; `eta -> -eta` is a pi phase shift of the drive.
    pub eta: f64,
    #[serde(rename = "phi_L")]
    pub phi_l: f64,
    #[serde(rename = "phi_R")]
    pub phi_r: f64,
    pub n_left: usize,
    pub n_right: usize,
}

fn unit_coupling() -> f64 {
    1.0
}

impl SystemParams {
    /// The operating point used throughout the single-molecule and
    /// benchmark runs: resonant, `Ω32 = 5g`, `Ω31 = g`, `κ = 5g`, `η = 4g`,
    /// `φ_L = 0`, `φ_R = π`, one left-handed molecule.
    pub fn benchmark() -> Self {
        SystemParams {
            g: 1.0,
            omega31: 1.0,
            omega32: 5.0,
            delta_c: 0.0,
            delta31: 0.0,
            delta32: 0.0,
            kappa: 5.0,
            eta: 4.0,
            phi_l: 0.0,
            phi_r: PI,
            n_left: 1,
            n_right: 0,
        }
    }

    /// Bare driven cavity with no molecules.
    pub fn bare_cavity(eta: f64, kappa: f64, delta_c: f64) -> Self {
        SystemParams {
            eta,
            kappa,
            delta_c,
            n_left: 0,
            n_right: 0,
            ..Self::benchmark()
        }
    }

    pub fn with_counts(mut self, n_left: usize, n_right: usize) -> Self {
        self.n_left = n_left;
        self.n_right = n_right;
        self
    }

    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta = eta;
        self
    }

    pub fn n_molecules(&self) -> usize {
        self.n_left + self.n_right
    }

    /// Checks the invariants and maps both loop phases into `[0, 2π)`.
    pub fn validate(&self) -> Result<SystemParams> {
        let fields = [
            ("g", self.g),
            ("omega31", self.omega31),
            ("omega32", self.omega32),
            ("delta_c", self.delta_c),
            ("delta31", self.delta31),
            ("delta32", self.delta32),
            ("kappa", self.kappa),
            ("eta", self.eta),
            ("phi_L", self.phi_l),
            ("phi_R", self.phi_r),
        ];
        for (field, value) in fields {
            if !value.is_finite() {
                return Err(Error::NonFinite { field });
            }
        }
        if self.g <= 0.0 {
            return Err(Error::ZeroUnit(self.g));
        }
        if self.kappa < 0.0 {
            return Err(Error::NegativeRate {
                field: "kappa",
                value: self.kappa,
            });
        }
        let mut p = self.clone();
        p.phi_l = normalize_phase(p.phi_l);
        p.phi_r = normalize_phase(p.phi_r);
        Ok(p)
    }

    pub fn loop_phase(&self, chirality: Chirality) -> f64 {
        match chirality {
            Chirality::Left => self.phi_l,
            Chirality::Right => self.phi_r,
        }
    }

    pub fn count(&self, chirality: Chirality) -> usize {
        match chirality {
            Chirality::Left => self.n_left,
            Chirality::Right => self.n_right,
        }
    }

    /// Molecules in layout order: all left-handed, then all right-handed.
    pub fn molecules(&self) -> impl Iterator<Item = MoleculeId> + '_ {
        let left = (1..=self.n_left).map(|index| MoleculeId {
            chirality: Chirality::Left,
            index,
        });
        let right = (1..=self.n_right).map(|index| MoleculeId {
            chirality: Chirality::Right,
            index,
        });
        left.chain(right)
    }

    /// Largest rate in the model, used to scale default step sizes.
    pub fn max_rate(&self) -> f64 {
        [
            self.kappa,
            self.eta.abs(),
            self.omega32.abs(),
            self.omega31.abs(),
            self.g,
            self.delta_c.abs(),
            self.delta31.abs(),
            self.delta32.abs(),
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    /// Steady intracavity photon number of the empty driven cavity,
    /// `η² / (Δc² + κ²/4)`.
    pub fn bare_cavity_photons(&self) -> f64 {
        self.eta * self.eta / (self.delta_c * self.delta_c + 0.25 * self.kappa * self.kappa)
    }
}

fn normalize_phase(phi: f64) -> f64 {
    let r = phi.rem_euclid(TAU);
    // rem_euclid can round up to exactly 2π for tiny negative inputs
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Identifies the `index`-th molecule (1-based) of a given chirality.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MoleculeId {
    pub chirality: Chirality,
    pub index: usize,
}

impl MoleculeId {
    pub fn new(p: &SystemParams, chirality: Chirality, index: usize) -> Result<Self> {
        let count = p.count(chirality);
        if index == 0 || index > count {
            return Err(Error::MoleculeIndex { index, count });
        }
        Ok(MoleculeId { chirality, index })
    }

    /// Position of this molecule in layout order.
    pub fn slot(&self, p: &SystemParams) -> usize {
        match self.chirality {
            Chirality::Left => self.index - 1,
            Chirality::Right => p.n_left + self.index - 1,
        }
    }
}

impl fmt::Display for MoleculeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.chirality, self.index)
    }
}
