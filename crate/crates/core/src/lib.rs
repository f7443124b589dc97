//! Simulation of cyclic three-level chiral molecules in a driven, lossy
//! cavity.
//!
//! Two solvers share one parameter set:
//!
//! * [`exact`]: Lindblad master equation on the truncated Fock space times
//!   one qutrit per molecule (up to four molecules).
//! * [`gdtwa`]: generalized discrete truncated Wigner trajectories, linear in
//!   the molecule count.
//!
//! [`observables`] converts either output into photon statistics and level
//! populations, and [`analysis`] turns steady-state photon numbers into
//! enantiomeric-excess estimates and their uncertainty.

pub mod analysis;
pub mod error;
pub mod exact;
pub mod gdtwa;
pub mod ggm;
pub mod io;
pub mod observables;
pub mod params;

pub use error::{Error, Result};
pub use params::{Chirality, MoleculeId, SystemParams};
