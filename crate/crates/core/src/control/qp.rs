//! Projection onto the constraint polytope in the metric of a positive
//! definite matrix: `min 1/2 (h - t)^T S (h - t)` subject to `psi_l . h <= nu_l`.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::ConstraintSet;
use crate::scalar::{dot, max_abs, Real};

/// Largest number of constraints handled by active-set enumeration.
pub const ENUMERATION_LIMIT: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct QpSolution<T> {
    pub h: Vec<T>,
    /// One multiplier per constraint row.
    pub multipliers: Vec<T>,
    /// Sum of stationarity, feasibility and complementarity residuals.
    pub kkt_residual: T,
}

/// Solves the metric projection of `target` onto `k`.
pub fn metric_projection<T: Real>(
    metric: &DMatrix<T>,
    metric_inv: &DMatrix<T>,
    target: &[T],
    k: &ConstraintSet<T>,
) -> Result<QpSolution<T>> {
    let r = k.len();
    if k.contains(target) {
        return Ok(finish(metric, target, target.to_vec(), vec![T::zero(); r], k));
    }
    if r == 0 {
        return Err(Error::Infeasible("no constraints yet target rejected".into()));
    }
    if r <= ENUMERATION_LIMIT {
        if let Some(sol) = enumerate(metric, metric_inv, target, k) {
            return Ok(sol);
        }
    }
    dual_projected_gradient(metric, metric_inv, target, k)
}

/// Equality-constrained projection with the rows in `active`; `None` when the
/// active rows are dependent.
fn solve_active<T: Real>(
    metric_inv: &DMatrix<T>,
    target: &[T],
    k: &ConstraintSet<T>,
    active: &[usize],
) -> Option<(Vec<T>, Vec<T>)> {
    let n = target.len();
    let s = active.len();
    let a = DMatrix::from_fn(s, n, |i, j| k.rows[active[i]].psi[j]);
    let t = DVector::from_column_slice(target);
    let h_mat = &a * metric_inv * a.transpose();
    let rhs = DVector::from_iterator(s, active.iter().map(|&l| dot(&k.rows[l].psi, target) - k.rows[l].nu));
    let mu = h_mat.lu().solve(&rhs)?;
    if !mu.iter().all(|x| x.is_finite()) {
        return None;
    }
    let h = &t - metric_inv * a.transpose() * &mu;
    Some((h.iter().copied().collect(), mu.iter().copied().collect()))
}

fn enumerate<T: Real>(
    metric: &DMatrix<T>,
    metric_inv: &DMatrix<T>,
    target: &[T],
    k: &ConstraintSet<T>,
) -> Option<QpSolution<T>> {
    let n = target.len();
    let r = k.len();
    let scale = T::one() + max_abs(target);
    let mu_tol = T::lit(1e-12) * scale;
    for size in 1..=n.min(r) {
        for active in (0..r).combinations(size) {
            let Some((h, mu)) = solve_active(metric_inv, target, k, &active) else {
                continue;
            };
            if mu.iter().any(|&m| m < -mu_tol) || !k.contains(&h) {
                continue;
            }
            let mut full = vec![T::zero(); r];
            for (&l, &m) in active.iter().zip(&mu) {
                full[l] = m.max(T::zero());
            }
            return Some(finish(metric, target, h, full, k));
        }
    }
    None
}

fn dual_projected_gradient<T: Real>(
    metric: &DMatrix<T>,
    metric_inv: &DMatrix<T>,
    target: &[T],
    k: &ConstraintSet<T>,
) -> Result<QpSolution<T>> {
    let n = target.len();
    let r = k.len();
    let psi = DMatrix::from_fn(r, n, |l, j| k.rows[l].psi[j]);
    let t = DVector::from_column_slice(target);
    let hess = &psi * metric_inv * psi.transpose();
    let lin = DVector::from_iterator(r, (0..r).map(|l| dot(&k.rows[l].psi, target) - k.rows[l].nu));
    let dual = |mu: &DVector<T>| lin.dot(mu) - (mu.transpose() * &hess * mu)[(0, 0)] * T::lit(0.5);
    let mut mu = DVector::<T>::zeros(r);
    let trace = (0..r).fold(T::zero(), |a, i| a + hess[(i, i)]);
    let mut step = T::one() / trace.max(T::eps());
    let tol = T::lit(1e-15) * (T::one() + max_abs(target));
    for _ in 0..100_000 {
        let grad = &lin - &hess * &mu;
        let f0 = dual(&mu);
        let mut s = step * T::lit(4.0);
        let next = loop {
            let cand = (&mu + &grad * s).map(|x| x.max(T::zero()));
            let d = &cand - &mu;
            // Armijo condition for projected ascent.
            if dual(&cand) >= f0 + grad.dot(&d) * T::lit(1e-4) || s < T::eps() {
                break cand;
            }
            s *= T::lit(0.5);
        };
        step = s;
        let moved = (&next - &mu).amax();
        mu = next;
        if moved <= tol {
            break;
        }
    }
    // Polish on the identified active set.
    let active: Vec<usize> = (0..r).filter(|&l| mu[l] > tol).collect();
    if !active.is_empty() {
        if let Some((h, m)) = solve_active(metric_inv, target, k, &active) {
            if m.iter().all(|&x| x >= -tol) && k.contains(&h) {
                let mut full = vec![T::zero(); r];
                for (&l, &v) in active.iter().zip(&m) {
                    full[l] = v.max(T::zero());
                }
                return Ok(finish(metric, target, h, full, k));
            }
        }
    }
    let h = &t - metric_inv * psi.transpose() * &mu;
    Ok(finish(metric, target, h.iter().copied().collect(), mu.iter().copied().collect(), k))
}

fn finish<T: Real>(metric: &DMatrix<T>, target: &[T], h: Vec<T>, mu: Vec<T>, k: &ConstraintSet<T>) -> QpSolution<T> {
    let kkt_residual = kkt_residual(metric, target, &h, &mu, k);
    QpSolution {
        h,
        multipliers: mu,
        kkt_residual,
    }
}

/// Stationarity + primal infeasibility + complementarity + dual infeasibility.
pub fn kkt_residual<T: Real>(metric: &DMatrix<T>, target: &[T], h: &[T], mu: &[T], k: &ConstraintSet<T>) -> T {
    let n = h.len();
    let diff = DVector::from_iterator(n, h.iter().zip(target).map(|(&a, &b)| a - b));
    let mut stat = metric * diff;
    for (l, row) in k.rows.iter().enumerate() {
        for j in 0..n {
            stat[j] += mu[l] * row.psi[j];
        }
    }
    let mut res = stat.amax();
    for (l, row) in k.rows.iter().enumerate() {
        let slack = dot(&row.psi, h) - row.nu;
        res += slack.max(T::zero()) + (mu[l] * slack).abs() + (-mu[l]).max(T::zero());
    }
    res
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LinearConstraint;

    fn grid_search_1d(s: f64, t: f64, lo: f64, hi: f64) -> f64 {
        let mut best = (f64::INFINITY, lo);
        let steps = ((hi - lo) / 1e-4).round() as usize;
        for i in 0..=steps {
            let h = lo + i as f64 * 1e-4;
            let v = 0.5 * s * (h - t) * (h - t);
            if v < best.0 {
                best = (v, h);
            }
        }
        best.1
    }

    #[test]
    fn interval_projection_matches_grid_search() {
        let k = ConstraintSet::short_leverage(1, -1.0, 2.0).unwrap();
        let m = DMatrix::from_element(1, 1, 0.25);
        let mi = DMatrix::from_element(1, 1, 4.0);
        for t in [-3.0, -0.5, 1.7, 2.4, 10.0] {
            let sol = metric_projection(&m, &mi, &[t], &k).unwrap();
            assert!((sol.h[0] - grid_search_1d(0.25, t, -1.0, 2.0)).abs() <= 1e-4);
            assert!(sol.kkt_residual < 1e-8);
        }
    }

    #[test]
    fn degenerate_point_set() {
        let k = ConstraintSet::new(
            vec![
                LinearConstraint { psi: vec![1.0], nu: 0.0 },
                LinearConstraint { psi: vec![-1.0], nu: 0.0 },
            ],
            vec![0.0],
        )
        .unwrap();
        let m = DMatrix::from_element(1, 1, 1.0);
        for t in [-2.0, 0.0, 3.0] {
            let sol = metric_projection(&m, &m, &[t], &k).unwrap();
            assert_eq!(sol.h, vec![0.0]);
            assert!(sol.kkt_residual < 1e-12);
        }
    }

    #[test]
    fn enumeration_and_dual_method_agree() {
        // Regular 12-gon around the origin, in a skewed metric.
        let rows: Vec<LinearConstraint<f64>> = (0..12)
            .map(|i| {
                let a = i as f64 * std::f64::consts::PI / 6.0;
                LinearConstraint { psi: vec![a.cos(), a.sin()], nu: 1.0 }
            })
            .collect();
        let k = ConstraintSet::new(rows, vec![0.0, 0.0]).unwrap();
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 0.5]);
        let mi = m.clone().try_inverse().unwrap();
        for t in [[3.0, 0.2], [-1.0, 4.0], [0.3, -0.2], [1.2, 1.2]] {
            let a = dual_projected_gradient(&m, &mi, &t, &k).unwrap();
            let sub = ConstraintSet::new(k.rows.clone(), vec![0.0, 0.0]).unwrap();
            let b = enumerate(&m, &mi, &t, &sub).unwrap_or_else(|| finish(&m, &t, t.to_vec(), vec![0.0; 12], &k));
            assert!((a.h[0] - b.h[0]).abs() < 1e-9 && (a.h[1] - b.h[1]).abs() < 1e-9, "{:?} {:?}", a.h, b.h);
            assert!(a.kkt_residual < 1e-8, "{}", a.kkt_residual);
        }
    }
}
