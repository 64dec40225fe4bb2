//! Two competing technologies spreading over a physical contact network
//! while opinions about them evolve over a social network.
//!
//! Each community holds susceptible, adopter and dissatisfied fractions
//! for both technologies, plus an opinion level per technology anchored to
//! its initial predisposition. The crate simulates the discrete-time
//! recurrence, computes its adoption-free and adoption-diffused equilibria
//! and checks the model's structural properties numerically.

// `!(x > 0.0)` is used on purpose so that NaN fails range checks.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod dynamics;
pub mod equilibrium;
pub mod io;
pub mod model;
pub mod netgraph;
pub mod verify;

pub use dynamics::{simulate, step, InjectionEvent, Trajectory};
pub use equilibrium::{solve_adoption_diffused, Equilibrium, EquilibriumKind};
pub use model::{ModelConfig, SystemState, Tech, TechParams, ValidatedConfig};
pub use netgraph::WeightedDigraph;
