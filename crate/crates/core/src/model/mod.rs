//! Model parameters, simplex geometry and the constraint polytope.

mod constraints;
mod params;
mod simplex;

pub use constraints::{ConstraintSet, LinearConstraint, K_TOL};
pub use params::{Model, ModelParams, Numerics};
pub use simplex::{
    dist_to_restricted, lift, lift_to_simplex, lift_unchecked, project_to_restricted,
    project_to_simplex, restrict, RestrictedPoint, SimplexPoint, SIMPLEX_TOL,
};
