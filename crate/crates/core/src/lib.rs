//! Propagation of non-classical light through SSH waveguide lattices whose
//! domain walls are moved by bending waveguides.
//!
//! The engine tracks Gaussian moments (⟨a⟩, ⟨a†a⟩, ⟨aa⟩) and the fourth-order
//! correlation tensor ⟨a†a a†a⟩ under a z-dependent quadratic Hamiltonian, so
//! cost scales with the number of waveguides instead of the Fock-space size.

pub mod error;
pub mod lattice;
pub mod spectral;
pub mod states;
pub mod observables;
pub mod evolution;
pub mod fock;
pub mod protocols;
pub mod io;
pub mod verify;

pub use error::{Error, Result};

pub use evolution::{Observers, Propagator, RunMeta, RunOptions, Trajectory};
pub use lattice::{BendShape, Bond, CouplingSchedule, Direction, DisorderKind, LatticeSpec};
pub use protocols::{ExperimentConfig, Preset};
pub use states::{CorrelationTensor, GaussianMoments, InitialState, Squeeze, C64};
