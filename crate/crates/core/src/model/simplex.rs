//! Unit simplex geometry: filter states, their restriction to the first
//! `d - 1` coordinates, the lift back, and distances/projections.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{sum, Real};

/// Absolute tolerance for simplex membership, per constraint.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// A probability vector on `d` states.
///
/// The last component is always stored as the complement of the others, so
/// `lift(restrict(p)) == p` holds bit for bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimplexPoint<T> {
    p: Vec<T>,
}

impl<T: Real> SimplexPoint<T> {
    /// Validates `p` against the simplex tolerance and canonicalizes it.
    pub fn new(p: Vec<T>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::Domain("simplex point needs at least one component".into()));
        }
        let tol = T::lit(SIMPLEX_TOL);
        if let Some((i, x)) = p.iter().enumerate().find(|(_, &x)| !(x >= -tol)) {
            return Err(Error::Domain(format!("component {i} is {x}, below zero")));
        }
        let s = sum(&p);
        if (s - T::one()).abs() > tol {
            return Err(Error::Domain(format!("components sum to {s}, not 1")));
        }
        Ok(Self::canonical(p))
    }

    /// Clips tiny negatives and rewrites the last entry as a complement.
    fn canonical(mut p: Vec<T>) -> Self {
        let d = p.len();
        for x in p.iter_mut() {
            if *x < T::zero() {
                *x = T::zero();
            }
        }
        let head = sum(&p[..d - 1]);
        if head > T::one() {
            for x in p[..d - 1].iter_mut() {
                *x /= head;
            }
            p[d - 1] = T::one() - sum(&p[..d - 1]);
            if p[d - 1] < T::zero() {
                p[d - 1] = T::zero();
            }
        } else {
            p[d - 1] = T::one() - head;
        }
        Self { p }
    }

    /// The vertex `e_k` of the simplex in dimension `d`.
    pub fn vertex(d: usize, k: usize) -> Self {
        assert!(k < d);
        let mut p = vec![T::zero(); d];
        p[k] = T::one();
        Self { p }
    }

    /// The barycenter `(1/d, ..., 1/d)`.
    pub fn uniform(d: usize) -> Self {
        Self::canonical(vec![T::one() / T::count(d); d])
    }

    pub fn dim(&self) -> usize {
        self.p.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.p
    }

    pub fn into_vec(self) -> Vec<T> {
        self.p
    }

    /// Drops the last component.
    pub fn restrict(&self) -> RestrictedPoint<T> {
        RestrictedPoint {
            pi: self.p[..self.p.len() - 1].to_vec(),
        }
    }
}

/// The first `d - 1` components of a (possibly extended) filter state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RestrictedPoint<T> {
    pub pi: Vec<T>,
}

impl<T: Real> RestrictedPoint<T> {
    pub fn new(pi: Vec<T>) -> Self {
        Self { pi }
    }

    pub fn dim(&self) -> usize {
        self.pi.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.pi
    }

    /// Max-norm distance to the restricted simplex.
    pub fn dist(&self) -> T {
        dist_to_restricted(&self.pi)
    }

    /// Membership in the restricted simplex (components >= 0, sum <= 1).
    pub fn in_simplex(&self) -> bool {
        let tol = T::lit(SIMPLEX_TOL);
        self.pi.iter().all(|&x| x >= -tol) && sum(&self.pi) <= T::one() + tol
    }

    /// Membership in the enlarged set of points within max-norm distance `eps`.
    pub fn in_extended(&self, eps: T) -> bool {
        self.dist() <= eps
    }
}

/// Lifts `pi` to `(pi, 1 - sum(pi))`. Points outside the simplex but within
/// `eps` of it are lifted to vectors with possibly negative entries that still
/// sum to one.
pub fn lift<T: Real>(pi: &RestrictedPoint<T>, eps: T) -> Result<Vec<T>> {
    let dist = pi.dist();
    if dist > eps {
        return Err(Error::Domain(format!(
            "point at distance {dist} from the simplex exceeds the extension {eps}"
        )));
    }
    Ok(lift_unchecked(&pi.pi))
}

/// Lifts without the distance check.
#[inline]
pub fn lift_unchecked<T: Real>(pi: &[T]) -> Vec<T> {
    let mut p = Vec::with_capacity(pi.len() + 1);
    p.extend_from_slice(pi);
    p.push(T::one() - sum(pi));
    p
}

/// Lifts a restricted point that lies in the simplex to a [`SimplexPoint`].
pub fn lift_to_simplex<T: Real>(pi: &RestrictedPoint<T>) -> Result<SimplexPoint<T>> {
    if !pi.in_simplex() {
        return Err(Error::Domain(format!(
            "point at distance {} lies outside the simplex",
            pi.dist()
        )));
    }
    SimplexPoint::new(lift_unchecked(&pi.pi))
}

/// Restricts a simplex point to its first `d - 1` coordinates.
pub fn restrict<T: Real>(p: &SimplexPoint<T>) -> RestrictedPoint<T> {
    p.restrict()
}

/// Max-norm distance from `pi` to `{x >= 0, sum x <= 1}`.
///
/// The distance is the smallest `t >= 0` such that the box of radius `t`
/// around `pi` meets the set; that happens iff `sum max(0, pi_i - t) <= 1`
/// once `t >= max(0, -min pi)`.
pub fn dist_to_restricted<T: Real>(pi: &[T]) -> T {
    if pi.is_empty() {
        return T::zero();
    }
    let t0 = pi.iter().fold(T::zero(), |acc, &x| acc.max(-x));
    let excess = |t: T| pi.iter().fold(T::zero(), |acc, &x| acc + (x - t).max(T::zero()));
    if excess(t0) <= T::one() {
        return t0;
    }
    let mut sorted = pi.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite coordinates"));
    // excess(t) is piecewise linear and decreasing; find the segment with excess = 1.
    let mut prefix = T::zero();
    for k in 0..sorted.len() {
        prefix += sorted[k];
        let t = (prefix - T::one()) / T::count(k + 1);
        let next = if k + 1 < sorted.len() { sorted[k + 1] } else { -T::lit(f64::INFINITY) };
        if t >= next && t <= sorted[k] {
            return t.max(t0);
        }
    }
    // Numerically unreachable; fall back to a bisection.
    let (mut lo, mut hi) = (t0, t0 + sorted[0].abs() + T::one());
    for _ in 0..200 {
        let mid = (lo + hi) * T::lit(0.5);
        if excess(mid) > T::one() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// Euclidean projection onto the unit simplex `{x >= 0, sum x = 1}`.
pub fn project_to_simplex<T: Real>(v: &[T]) -> SimplexPoint<T> {
    assert!(!v.is_empty(), "cannot project an empty vector");
    let tol = T::lit(SIMPLEX_TOL);
    if v.iter().all(|&x| x >= T::zero()) && (sum(v) - T::one()).abs() <= tol {
        return SimplexPoint::canonical(v.to_vec());
    }
    let theta = simplex_threshold(v);
    SimplexPoint::canonical(v.iter().map(|&x| (x - theta).max(T::zero())).collect())
}

/// The shift `theta` such that `sum max(v_i - theta, 0) = 1`.
fn simplex_threshold<T: Real>(v: &[T]) -> T {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).expect("finite coordinates"));
    let mut prefix = T::zero();
    let mut theta = T::zero();
    for (j, &uj) in u.iter().enumerate() {
        prefix += uj;
        let cand = (prefix - T::one()) / T::count(j + 1);
        if uj - cand > T::zero() {
            theta = cand;
        }
    }
    theta
}

/// Euclidean projection onto the restricted simplex `{x >= 0, sum x <= 1}`.
pub fn project_to_restricted<T: Real>(pi: &[T]) -> Vec<T> {
    let clipped: Vec<T> = pi.iter().map(|&x| x.max(T::zero())).collect();
    if sum(&clipped) <= T::one() {
        return clipped;
    }
    let theta = simplex_threshold(pi);
    pi.iter().map(|&x| (x - theta).max(T::zero())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lift_examples() {
        let p = lift(&RestrictedPoint::<f64>::new(vec![1.0]), 0.0).unwrap();
        assert_eq!(p, vec![1.0, 0.0]);
        let p = lift(&RestrictedPoint::<f64>::new(vec![0.2, 0.3]), 0.0).unwrap();
        assert_eq!(p[2], 1.0 - (0.2 + 0.3));
        assert!((p[2] - 0.5).abs() < 1e-15);
        let p = lift(&RestrictedPoint::<f64>::new(vec![-0.01]), 0.05).unwrap();
        assert_eq!(p, vec![-0.01, 1.01]);
        assert_eq!(p[0] + p[1], 1.0);
        assert!(lift(&RestrictedPoint::<f64>::new(vec![-0.1]), 0.05).is_err());
    }

    #[test]
    fn restrict_examples() {
        let p = SimplexPoint::new(vec![1.0, 0.0]).unwrap();
        assert_eq!(p.restrict().pi, vec![1.0]);
        let p = SimplexPoint::new(vec![0.25, 0.25, 0.5]).unwrap();
        assert_eq!(p.restrict().pi, vec![0.25, 0.25]);
        assert_eq!(lift_unchecked(&p.restrict().pi), p.as_slice());
    }

    #[test]
    fn rejects_invalid_points() {
        assert!(SimplexPoint::new(vec![0.5, 0.6]).is_err());
        assert!(SimplexPoint::new(vec![-0.1, 1.1]).is_err());
        assert!(SimplexPoint::<f64>::new(vec![]).is_err());
    }

    #[test]
    fn projection_examples() {
        assert_eq!(project_to_simplex(&[0.5, 0.5]).as_slice(), &[0.5, 0.5]);
        assert_eq!(project_to_simplex(&[1.2, -0.2]).as_slice(), &[1.0, 0.0]);
        assert_eq!(project_to_simplex(&[0.0, 0.0]).as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn projection_matches_grid_search() {
        let v = [1.2, -0.2];
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..=10_000 {
            let x = i as f64 * 1e-4;
            let d = (x - v[0]).powi(2) + (1.0 - x - v[1]).powi(2);
            if d < best.0 {
                best = (d, x);
            }
        }
        let p = project_to_simplex(&v);
        assert!((p.as_slice()[0] - best.1).abs() <= 1e-4);
    }

    #[test]
    fn distance_in_max_norm() {
        assert_eq!(dist_to_restricted::<f64>(&[0.3, 0.3]), 0.0);
        assert!((dist_to_restricted::<f64>(&[-0.02, 0.5]) - 0.02).abs() < 1e-15);
        // (0.7, 0.7): shrink both by t so that 1.4 - 2t = 1.
        assert!((dist_to_restricted::<f64>(&[0.7, 0.7]) - 0.2).abs() < 1e-15);
        assert!((dist_to_restricted::<f64>(&[1.3, 0.1]) - 0.3).abs() < 1e-15);
        assert!((dist_to_restricted::<f64>(&[1.05]) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn restricted_projection() {
        assert_eq!(project_to_restricted::<f64>(&[-0.1, 0.4]), vec![0.0, 0.4]);
        let q = project_to_restricted::<f64>(&[0.8, 0.6]);
        assert!((q[0] - 0.6).abs() < 1e-15 && (q[1] - 0.4).abs() < 1e-15);
    }
}
