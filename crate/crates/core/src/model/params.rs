use nalgebra::DMatrix;
use serde::Serialize;

use crate::control::{cost_bounds, CostBounds};
use crate::density::DensityFamily;
use crate::error::{Error, Result, ValidationReport};
use crate::quadrature::{GaussLegendre, TensorRule};
use crate::scalar::{sum, Real};

use super::{ConstraintSet, SimplexPoint, SIMPLEX_TOL};

/// Largest accepted condition number of the volatility matrix.
const MAX_CONDITION: f64 = 1e12;

/// Market and signal specification.
///
/// `generator` is the `d x d` rate matrix of the hidden chain, `drift` the
/// `n x d` matrix whose column `k` holds the asset drifts in state `k`.
#[derive(Clone, Debug)]
pub struct ModelParams<T: Real> {
    pub generator: DMatrix<T>,
    pub drift: DMatrix<T>,
    pub sigma: DMatrix<T>,
    pub lambda: T,
    pub theta: T,
    pub horizon: T,
    pub x0: T,
    pub prior: Vec<T>,
    pub densities: DensityFamily<T>,
}

impl<T: Real> ModelParams<T> {
    pub fn states(&self) -> usize {
        self.generator.nrows()
    }

    pub fn assets(&self) -> usize {
        self.sigma.nrows()
    }

    /// Lists every violated invariant; an empty report means the parameters
    /// (together with `k`) define a usable model.
    pub fn validate(&self, k: &ConstraintSet<T>) -> ValidationReport {
        let mut r = ValidationReport::default();
        let d = self.generator.nrows();
        let n = self.sigma.nrows();
        if d == 0 || self.generator.ncols() != d {
            r.push("generator", format!("must be square and non-empty, got {}x{}", d, self.generator.ncols()));
        }
        if n == 0 || self.sigma.ncols() != n {
            r.push("sigma", format!("must be square and non-empty, got {}x{}", n, self.sigma.ncols()));
        }
        if self.drift.nrows() != n || self.drift.ncols() != d {
            r.push(
                "drift",
                format!("must be {n}x{d} (assets x states), got {}x{}", self.drift.nrows(), self.drift.ncols()),
            );
        }
        if !r.is_valid() {
            return r;
        }
        let tol = T::lit(SIMPLEX_TOL);
        for i in 0..d {
            let row: Vec<T> = self.generator.row(i).iter().copied().collect();
            let s = sum(&row);
            if !((s).abs() <= tol) {
                r.push(format!("generator row {}", i + 1), format!("sums to {s}, expected 0"));
            }
            for (j, &q) in row.iter().enumerate() {
                if j != i && !(q >= T::zero()) {
                    r.push(
                        format!("generator row {}", i + 1),
                        format!("off-diagonal entry {} is {q}, must be >= 0", j + 1),
                    );
                }
            }
        }
        if self.drift.iter().any(|x| !x.is_finite()) {
            r.push("drift", "entries must be finite");
        }
        let sv = self.sigma.clone().singular_values();
        let smax = sv.iter().fold(T::zero(), |a, &x| a.max(x));
        let smin = sv.iter().fold(T::lit(f64::INFINITY), |a, &x| a.min(x));
        let cond = smax / smin;
        if !(smin > T::zero()) || !cond.is_finite() || cond.as_f64() > MAX_CONDITION {
            r.push("sigma", format!("must be invertible (condition number {cond})"));
        }
        if !(self.lambda >= T::zero() && self.lambda.is_finite()) {
            r.push("lambda", format!("signal intensity must be finite and >= 0, got {}", self.lambda));
        }
        if !(self.theta < T::one()) || self.theta == T::zero() || !self.theta.is_finite() {
            r.push("theta", format!("must satisfy theta < 1 and theta != 0, got {}", self.theta));
        }
        if !(self.horizon > T::zero() && self.horizon.is_finite()) {
            r.push("horizon", format!("must be positive, got {}", self.horizon));
        }
        if !(self.x0 > T::zero()) {
            r.push("x0", format!("initial wealth must be positive, got {}", self.x0));
        }
        if self.prior.len() != d {
            r.push("prior", format!("has length {}, expected {d}", self.prior.len()));
        } else if let Err(e) = SimplexPoint::new(self.prior.clone()) {
            r.push("prior", format!("not in the unit simplex: {e}"));
        }
        if self.densities.states() != d {
            r.push(
                "signals.densities",
                format!("has {} densities, expected one per state ({d})", self.densities.states()),
            );
        }
        let nodes = match self.densities.kappa() {
            1 => 64,
            2 => 40,
            _ => 20,
        };
        for (k, err) in self.densities.normalization_errors(nodes).into_iter().enumerate() {
            if !(err <= T::lit(1e-6)) {
                r.push(format!("signals.densities[{k}]"), format!("integrates to 1 +- {err}"));
            }
        }
        if k.dim() != n {
            r.push("constraints", format!("act on {} assets, expected {n}", k.dim()));
        } else {
            for (field, msg) in k.check() {
                r.push(field, msg);
            }
        }
        r
    }
}

/// Numerical knobs that affect the model-level coefficient evaluation.
#[derive(Clone, Debug, Default, Serialize)]
pub struct Numerics<T> {
    /// Width of the extension of the restricted simplex used by the taper.
    pub taper_eps: Option<T>,
    /// Gauss–Legendre nodes per dimension for marginal integrals.
    pub quadrature_nodes: Option<usize>,
    /// Nodes per dimension for integrals over uniform marks.
    pub jump_nodes: Option<usize>,
}

/// Validated model with derived quantities cached.
#[derive(Clone, Debug)]
pub struct Model<T: Real> {
    pub params: ModelParams<T>,
    pub constraints: ConstraintSet<T>,
    pub prior: SimplexPoint<T>,
    /// Taper width of the extended simplex.
    pub eps: T,
    /// Largest admissible extension `C1 / ((d - 1) C2)`.
    pub eps_max: T,
    pub sigma_inv: DMatrix<T>,
    /// `sigma sigma^T`.
    pub cov: DMatrix<T>,
    pub cov_inv: DMatrix<T>,
    pub cost: CostBounds<T>,
    /// Vertices of the constraint polytope.
    pub k_vertices: Vec<Vec<T>>,
    /// Rule for marginal integrals inside the Rosenblatt transform.
    pub rule: GaussLegendre<T>,
    /// Tensor rule over uniform marks in `[0, 1]^kappa`.
    pub mark_rule: TensorRule<T>,
    /// Tensor rule over the unit cube, mapped to `Z` for signal-space integrals.
    pub signal_rule: TensorRule<T>,
}

impl<T: Real> Model<T> {
    pub fn new(params: ModelParams<T>, constraints: ConstraintSet<T>, numerics: &Numerics<T>) -> Result<Self> {
        let report = params.validate(&constraints);
        if !report.is_valid() {
            return Err(Error::Validation(report));
        }
        let d = params.states();
        let kappa = params.densities.kappa();
        let eps_max = params.densities.eps_max();
        let eps = match numerics.taper_eps {
            Some(e) => e,
            None if d < 2 => T::lit(0.01),
            None => T::lit(0.01).min(eps_max * T::lit(0.5)),
        };
        if d >= 2 && !(eps > T::zero() && eps < eps_max) {
            return Err(Error::Config(format!(
                "numerics.taper_eps = {eps} must lie in (0, {eps_max})"
            )));
        }
        let sigma_inv = params
            .sigma
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Config("sigma is singular".into()))?;
        let cov = &params.sigma * params.sigma.transpose();
        let cov_inv = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Config("sigma sigma^T is not positive definite".into()))?
            .inverse();
        let quad = numerics.quadrature_nodes.unwrap_or(32);
        let jump_nodes = numerics.jump_nodes.unwrap_or(match kappa {
            1 => 32,
            2 => 12,
            _ => 6,
        });
        if quad == 0 || jump_nodes == 0 {
            return Err(Error::Config("quadrature node counts must be positive".into()));
        }
        let k_vertices = constraints.vertices();
        let cost = cost_bounds(&params, &constraints, &cov, &cov_inv, &k_vertices)?;
        let prior = SimplexPoint::new(params.prior.clone())?;
        Ok(Self {
            prior,
            eps,
            eps_max,
            sigma_inv,
            cov,
            cov_inv,
            cost,
            k_vertices,
            rule: GaussLegendre::new(quad),
            mark_rule: TensorRule::new(kappa, jump_nodes),
            signal_rule: TensorRule::new(kappa, quad.min(match kappa {
                1 => 64,
                2 => 32,
                _ => 16,
            })),
            params,
            constraints,
        })
    }

    pub fn states(&self) -> usize {
        self.params.states()
    }

    pub fn assets(&self) -> usize {
        self.params.assets()
    }

    pub fn kappa(&self) -> usize {
        self.params.densities.kappa()
    }

    pub fn horizon(&self) -> T {
        self.params.horizon
    }

    pub fn theta(&self) -> T {
        self.params.theta
    }

    pub fn lambda(&self) -> T {
        self.params.lambda
    }

    pub fn densities(&self) -> &DensityFamily<T> {
        &self.params.densities
    }

    /// A priori bounds `(e^{-C_b (T - t)}, e^{C_b (T - t)})` on the value function.
    pub fn value_bounds(&self, t: T) -> (T, T) {
        let c = self.cost.abs_max * (self.horizon() - t);
        ((-c).exp(), c.exp())
    }
}
