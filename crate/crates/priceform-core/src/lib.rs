//! Variational solver for one-dimensional price-formation mean-field games.
//!
//! The commodity price is obtained from a convex variational problem for a
//! potential function on a time-space grid: the density is the space
//! derivative of the potential, and the price is the Lagrange multiplier of
//! the market balance constraint. A linear-quadratic benchmark with explicit
//! formulas is included for validation.
//!
//! The crate is `no_std` compatible (requires `alloc`); enable the default
//! `std` feature in ordinary use.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod analytic;
pub mod cost;
pub mod discretize;
pub mod grid;
pub mod metrics;
pub mod recovery;
pub mod setup;
pub mod solver;

#[allow(dead_code)]
mod fx;

pub use cost::{ConvexCost, CostError, LValue, QuadraticCost};
pub use discretize::{ConstraintSystem, DiscreteObjective};
pub use grid::{Grid, PotentialField};
pub use metrics::{ErrorReport, MfgSolution, Provenance};
pub use recovery::PriceSeries;
pub use setup::{InitialDensity, ProblemInstance, SupplyModel, SupplyPath};
pub use solver::{SolveError, SolveReport, SolverConfig};
