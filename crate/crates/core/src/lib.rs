//! Adaptive-dynamics toolkit for bacterial populations with dormancy, horizontal gene
//! transfer and rare mutation: exact stochastic simulation, mean-field ODEs, the
//! piecewise-affine exponent limit, branching-process oracles and competition systems.

pub mod branching;
pub mod competition;
pub mod fitness;
pub mod limit;
pub mod meanfield;
pub mod model;
pub mod piecewise;
pub mod ssa;
pub mod threads;

pub use fitness::{equilibrium, invasion_fitness, Equilibrium, FitnessMode};
pub use limit::{run_limit, LimitMode, LimitTrajectory, Termination};
pub use model::{ModelParams, PopulationState, TraitGrid, TraitIndex};
pub use piecewise::PiecewiseLinear;

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
