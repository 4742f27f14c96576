//! Cost integrand, its clipped extension, and the constrained maximization
//! of the Hamiltonian that defines optimal proportions.

mod field;
mod qp;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ConstraintSet, Model, ModelParams};
use crate::scalar::Real;

pub use field::{MyopicPolicy, Policy, StrategyField};
pub use qp::{kkt_residual, metric_projection, QpSolution, ENUMERATION_LIMIT};

/// Portfolio proportions invested in the risky assets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Strategy<T> {
    pub h: Vec<T>,
}

impl<T: Real> Strategy<T> {
    /// Accepts `h` only if it lies in `K` (within the membership tolerance).
    pub fn new(h: Vec<T>, k: &ConstraintSet<T>) -> Result<Self> {
        if h.len() != k.dim() {
            return Err(Error::Domain(format!("strategy has {} entries, expected {}", h.len(), k.dim())));
        }
        if !k.contains(&h) {
            return Err(Error::Domain(format!(
                "strategy {:?} violates the constraints by {}",
                crate::scalar::to_f64_vec(&h),
                k.violation(&h)
            )));
        }
        Ok(Self { h })
    }

    pub fn as_slice(&self) -> &[T] {
        &self.h
    }
}

/// Range `[lower, upper]` of the cost over the simplex times `K`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CostBounds<T> {
    pub lower: T,
    pub upper: T,
    /// `max(|lower|, |upper|)`.
    pub abs_max: T,
}

/// Cost integrand `-theta (h . M p - (1 - theta)/2 |sigma^T h|^2)`.
pub fn b_value<T: Real>(model: &Model<T>, p: &[T], h: &[T]) -> T {
    raw_cost(&model.params.drift, &model.cov, model.theta(), p, h)
}

/// Cost clipped to its range over the simplex; agrees with [`b_value`] there.
pub fn b_clipped<T: Real>(model: &Model<T>, p: &[T], h: &[T]) -> T {
    b_value(model, p, h).max(model.cost.lower).min(model.cost.upper)
}

fn raw_cost<T: Real>(drift: &DMatrix<T>, cov: &DMatrix<T>, theta: T, p: &[T], h: &[T]) -> T {
    let n = h.len();
    let mut gain = T::zero();
    let mut quad = T::zero();
    for a in 0..n {
        let mut mp = T::zero();
        for (k, &pk) in p.iter().enumerate() {
            mp += drift[(a, k)] * pk;
        }
        gain += h[a] * mp;
        for b in 0..n {
            quad += h[a] * cov[(a, b)] * h[b];
        }
    }
    -theta * (gain - (T::one() - theta) * T::lit(0.5) * quad)
}

/// Extremes of the cost over simplex vertices and `K`.
///
/// The cost is affine in `p`, so its extremes over the simplex sit at the
/// vertices. In `h` it is a quadratic: one extreme is the metric projection of
/// the Merton point, the other lies at a vertex of `K`. Evaluating both
/// candidate families covers either sign of `theta`.
pub(crate) fn cost_bounds<T: Real>(
    params: &ModelParams<T>,
    k: &ConstraintSet<T>,
    cov: &DMatrix<T>,
    cov_inv: &DMatrix<T>,
    vertices: &[Vec<T>],
) -> Result<CostBounds<T>> {
    let d = params.states();
    let theta = params.theta;
    let mut lo = T::lit(f64::INFINITY);
    let mut hi = -T::lit(f64::INFINITY);
    for s in 0..d {
        let mut e = vec![T::zero(); d];
        e[s] = T::one();
        let target = merton_target(params, cov_inv, &e);
        let proj = metric_projection(cov, cov_inv, &target, k)?;
        for h in vertices.iter().chain(std::iter::once(&proj.h)) {
            let b = raw_cost(&params.drift, cov, theta, &e, h);
            lo = lo.min(b);
            hi = hi.max(b);
        }
    }
    Ok(CostBounds {
        lower: lo,
        upper: hi,
        abs_max: lo.abs().max(hi.abs()),
    })
}

fn merton_target<T: Real>(params: &ModelParams<T>, cov_inv: &DMatrix<T>, p: &[T]) -> Vec<T> {
    let mp = &params.drift * DVector::from_column_slice(p);
    let h = cov_inv * mp / (T::one() - params.theta);
    h.iter().copied().collect()
}

/// Unconstrained maximizer `(sigma sigma^T)^{-1} M p / (1 - theta)`.
pub fn merton_point<T: Real>(model: &Model<T>, p: &[T]) -> Vec<T> {
    merton_target(&model.params, &model.cov_inv, p)
}

/// Unconstrained maximizer of the Hamiltonian's `h`-part given the value `v`
/// and its gradient `grad` with respect to the restricted state.
///
/// With `beta_k(p) = p_k sigma^{-1}(mu_k - M p)`, the chain rule through the
/// lift `p = (pi, 1 - sum pi)` only involves the first `d - 1` columns, and
/// `sigma beta_k = p_k (mu_k - M p)`. The maximizer is
/// `(sigma sigma^T)^{-1} (M p + sum_{k<d} p_k (mu_k - M p) grad_k / v) / (1 - theta)`.
pub fn hamiltonian_target<T: Real>(model: &Model<T>, p: &[T], v: T, grad: &[T]) -> Vec<T> {
    let drift = &model.params.drift;
    let n = model.assets();
    let mut mp = vec![T::zero(); n];
    for a in 0..n {
        for (k, &pk) in p.iter().enumerate() {
            mp[a] += drift[(a, k)] * pk;
        }
    }
    let mut c = mp.clone();
    for (k, &g) in grad.iter().enumerate() {
        let w = p[k] * g / v;
        for a in 0..n {
            c[a] += w * (drift[(a, k)] - mp[a]);
        }
    }
    let h = &model.cov_inv * DVector::from_vec(c) / (T::one() - model.theta());
    h.iter().copied().collect()
}

/// Maximizer over `K` of the strictly concave `h`-part of the Hamiltonian,
/// `h . (v M p + sigma sum_k beta_k grad_k) - (1 - theta) v / 2 |sigma^T h|^2`.
///
/// For `theta < 0` the dynamic programming equation takes an infimum of
/// `theta` times this expression, which is attained at the same point.
pub fn hamiltonian_argmax<T: Real>(model: &Model<T>, p: &[T], v: T, grad: &[T]) -> Result<QpSolution<T>> {
    if !(v > T::zero()) {
        return Err(Error::Domain(format!("value must be positive, got {v}")));
    }
    let target = hamiltonian_target(model, p, v, grad);
    metric_projection(&model.cov, &model.cov_inv, &target, &model.constraints)
}

/// The `h`-dependent part of the Hamiltonian including the `theta` factor.
pub fn hamiltonian_objective<T: Real>(model: &Model<T>, p: &[T], v: T, grad: &[T], h: &[T]) -> T {
    let target = hamiltonian_target(model, p, v, grad);
    let n = h.len();
    let one_minus = T::one() - model.theta();
    // q(h) = (1 - theta) v (h . S target - h . S h / 2), S = sigma sigma^T.
    let mut lin = T::zero();
    let mut quad = T::zero();
    for a in 0..n {
        for b in 0..n {
            lin += h[a] * model.cov[(a, b)] * target[b];
            quad += h[a] * model.cov[(a, b)] * h[b];
        }
    }
    model.theta() * one_minus * v * (lin - quad * T::lit(0.5))
}

/// Hessian `-theta (1 - theta) v sigma sigma^T` of the Hamiltonian's `h`-part.
pub fn hamiltonian_hessian<T: Real>(model: &Model<T>, v: T) -> DMatrix<T> {
    let th = model.theta();
    &model.cov * (-th * (T::one() - th) * v)
}
