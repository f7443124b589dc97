use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("negative rate: `{field}` = {value}")]
    NegativeRate { field: &'static str, value: f64 },

    #[error("coupling unit `g` must be positive, got {0}")]
    ZeroUnit(f64),

    #[error("parameter `{field}` is not finite")]
    NonFinite { field: &'static str },

    #[error("molecule index {index} out of range for {count} molecules of that chirality")]
    MoleculeIndex { index: usize, count: usize },

    #[error("GGM basis needs dimension >= 2, got {0}")]
    DimensionTooSmall(usize),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("matrix is not Hermitian (max asymmetry {0:.3e})")]
    NonHermitian(f64),

    #[error("trace is {0:.12}, expected 1")]
    TraceNotOne(f64),

    #[error("invalid state: eigenvalue {0:.3e} is negative")]
    InvalidState(f64),

    #[error("Fock cutoff {cutoff} too small for a driven or coupled cavity (need >= 2)")]
    CutoffTooSmall { cutoff: usize },

    #[error(
        "too many molecules for the exact solver: {requested} > {max}; use the GDTWA engine"
    )]
    TooManyMolecules { requested: usize, max: usize },

    #[error(
        "Fock cutoff breached at t = {time:.4}: top-state population {population:.3e} > 1e-4; \
         try a cutoff of at least {suggested}"
    )]
    CutoffBreach {
        time: f64,
        population: f64,
        suggested: usize,
    },

    #[error("non-physical evolution at t = {time:.4}: trace drift {drift:.3e}")]
    NonPhysical { time: f64, drift: f64 },

    #[error("invalid time grid: {0}")]
    InvalidTimeGrid(String),

    #[error("steady state not reached: trailing-window drift {drift:.3e} exceeds threshold {threshold:.3e}")]
    NotConverged { drift: f64, threshold: f64 },

    #[error("trajectory blow-up: |alpha| = {magnitude:.3e} exceeds guard {guard:.3e}")]
    BlowUp { magnitude: f64, guard: f64 },

    #[error("{failed} of {total} trajectories blew up (budget 0.1%)")]
    TooManyBlowUps { failed: usize, total: usize },

    #[error("inconsistent Wigner moments: m_abs4 = {m_abs4} < m_abs2^2 = {m_abs2_sq}")]
    JensenViolation { m_abs4: f64, m_abs2_sq: f64 },

    #[error("too many clipped variance points: {clipped} of {total} in the steady window")]
    TooManyClipped { clipped: usize, total: usize },

    #[error("enantiomeric excess {excess} is not realizable with {n_total} molecules")]
    NonRealizable { excess: f64, n_total: usize },

    #[error("sweep needs at least {needed} grid points, got {got}")]
    GridTooSmall { needed: usize, got: usize },

    #[error("invalid sweep: {0}")]
    InvalidSweep(String),

    #[error("grid point {point}: {source}")]
    AtGridPoint {
        point: f64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NegativeRate { .. } => "NegativeRate",
            Error::ZeroUnit(_) => "ZeroUnit",
            Error::NonFinite { .. } => "NonFinite",
            Error::MoleculeIndex { .. } => "MoleculeIndex",
            Error::DimensionTooSmall(_) => "DimensionTooSmall",
            Error::LengthMismatch { .. } => "LengthMismatch",
            Error::NonHermitian(_) => "NonHermitian",
            Error::TraceNotOne(_) => "TraceNotOne",
            Error::InvalidState(_) => "InvalidState",
            Error::CutoffTooSmall { .. } => "CutoffTooSmall",
            Error::TooManyMolecules { .. } => "TooManyMolecules",
            Error::CutoffBreach { .. } => "CutoffBreach",
            Error::NonPhysical { .. } => "NonPhysical",
            Error::InvalidTimeGrid(_) => "InvalidTimeGrid",
            Error::NotConverged { .. } => "NotConverged",
            Error::BlowUp { .. } => "BlowUp",
            Error::TooManyBlowUps { .. } => "TooManyBlowUps",
            Error::JensenViolation { .. } => "JensenViolation",
            Error::TooManyClipped { .. } => "TooManyClipped",
            Error::NonRealizable { .. } => "NonRealizable",
            Error::GridTooSmall { .. } => "GridTooSmall",
            Error::InvalidSweep(_) => "InvalidSweep",
            Error::AtGridPoint { source, .. } => source.kind(),
        }
    }
}
