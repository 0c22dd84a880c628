//! Non-local Benamou–Brenier transport between laws of lattice point processes.
//!
//! Configurations on a bounded window are occupancy vectors over lattice
//! cells, truncated at a total occupancy `n_max`. Laws are densities against
//! the truncated Poisson reference. The crate provides the continuity
//! equation, explicit solutions of it (Poisson paths, thinning interpolation,
//! the Ornstein–Uhlenbeck semigroup), a solver for the transport distance
//! `W₀`, and per-volume window functionals with an inequality harness.

pub mod configspace;
pub mod dynamics;
pub mod error;
pub mod measures;
pub mod mobility;
pub mod numerics;
pub mod solver;
pub mod stationary;

pub use configspace::{build_space, ConfigSpace, LatticeWindow};
pub use error::{Error, Result};
pub use measures::DensityMeasure;
