//! Expert-opinion densities on a rectangle `Z = [a, b]`, the Rosenblatt
//! transform and its inverse, and the exogenous jump coefficient.

mod family;
mod probe;
mod rosenblatt;

pub use family::{
    make_mixture, Density, DensityBounds, DensityFamily, Mixture, TruncatedGaussian, Uniform,
    MAX_SIGNAL_DIM,
};
pub use probe::{derivative_bound_probe, BoundReport, Envelopes};
pub use rosenblatt::{inverse_rosenblatt, jump_coeff, marginal_cdf_chain, Rosenblatt};
