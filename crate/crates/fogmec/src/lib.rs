//! Joint computation offloading and resource allocation for backhaul-limited
//! cooperative multi-fog mobile edge computing.
//!
//! The crate is organised around a [`Scenario`] (fogs, their mobile users and
//! the backhaul graph). [`dual_solver::solve`] computes the energy-optimal
//! allocation by penalty-augmented dual ascent, [`greedy::greedy_solve`] is the
//! load-balancing baseline, and [`scenario::generate`] builds seeded test
//! instances.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops read closer to the sums they implement.
#![allow(clippy::needless_range_loop)]

pub mod dual_solver;
pub mod error;
pub mod greedy;
pub mod model;
pub mod oracle;
mod roots;
pub mod scenario;
pub mod special_fn;

pub use dual_solver::{BalanceMove, BalanceStep, DualPoint, IterationTrace, Solution, SolverConfig};
pub use error::{Error, Result};
pub use model::{
    BackhaulTopology, Edge, EnergyReport, FeasibilityReport, FogNode, Helper, Link, MuProfile,
    MuVars, PrimalPoint, Scenario,
};
pub use scenario::{GenSpec, TopologyKind};
