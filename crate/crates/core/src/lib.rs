//! Portfolio optimization under partial information with expert opinions:
//! filter simulation, the restricted state SDE, the HJB solver on the
//! simplex, and Monte Carlo evaluation of strategies.
//!
//! Everything numeric is generic over [`Real`]; the `*64` aliases below fix
//! the scalar to `f64`, which is what the CLI and the studies use.

pub mod config;
pub mod control;
pub mod density;
pub mod error;
pub mod evaluate;
pub mod grid;
pub mod harness;
pub mod hjb;
pub mod model;
pub mod quadrature;
pub mod rng;
pub mod scalar;
pub mod simulation;

pub use error::{Error, Result, ValidationReport, Violation};
pub use scalar::Real;

pub type Model64 = model::Model<f64>;
pub type ModelParams64 = model::ModelParams<f64>;
pub type SimplexPoint64 = model::SimplexPoint<f64>;
pub type ConstraintSet64 = model::ConstraintSet<f64>;
pub type Strategy64 = control::Strategy<f64>;
pub type PathBundle64 = simulation::PathBundle<f64>;
