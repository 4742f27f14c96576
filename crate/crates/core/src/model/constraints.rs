//! The polytope `K = {h : psi_l . h <= nu_l, l = 1..r}` of admissible
//! portfolio proportions.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{dot, max_abs, Real};

/// Feasibility tolerance used when testing membership in `K`.
pub const K_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearConstraint<T> {
    pub psi: Vec<T>,
    pub nu: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet<T> {
    pub rows: Vec<LinearConstraint<T>>,
    pub slater_point: Vec<T>,
}

impl<T: Real> ConstraintSet<T> {
    /// Builds the set after checking dimensions. Use [`ConstraintSet::check`]
    /// for the Slater, origin and boundedness conditions.
    pub fn new(rows: Vec<LinearConstraint<T>>, slater_point: Vec<T>) -> Result<Self> {
        let n = slater_point.len();
        if n == 0 {
            return Err(Error::Config("constraints.slater_point must be non-empty".into()));
        }
        for (l, row) in rows.iter().enumerate() {
            if row.psi.len() != n {
                return Err(Error::Config(format!(
                    "constraints.rows[{l}].psi has length {}, expected {n}",
                    row.psi.len()
                )));
            }
        }
        Ok(Self { rows, slater_point })
    }

    /// Short-selling floor and leverage cap: `h_i >= short_limit`, `sum h <= leverage`.
    pub fn short_leverage(n: usize, short_limit: T, leverage: T) -> Result<Self> {
        let mut rows = Vec::with_capacity(n + 1);
        for i in 0..n {
            let mut psi = vec![T::zero(); n];
            psi[i] = -T::one();
            rows.push(LinearConstraint {
                psi,
                nu: -short_limit,
            });
        }
        rows.push(LinearConstraint {
            psi: vec![T::one(); n],
            nu: leverage,
        });
        // The barycenter of the simplex spanned by the n+1 vertices is interior.
        let span = leverage - T::count(n) * short_limit;
        let slater = vec![short_limit + span / T::count(n + 1); n];
        Self::new(rows, slater)
    }

    /// Box `lower_i <= h_i <= upper_i`.
    pub fn boxed(lower: &[T], upper: &[T]) -> Result<Self> {
        let n = lower.len();
        let mut rows = Vec::with_capacity(2 * n);
        for i in 0..n {
            let mut psi = vec![T::zero(); n];
            psi[i] = T::one();
            rows.push(LinearConstraint {
                psi: psi.clone(),
                nu: upper[i],
            });
            psi[i] = -T::one();
            rows.push(LinearConstraint { psi, nu: -lower[i] });
        }
        let mid = lower
            .iter()
            .zip(upper)
            .map(|(&a, &b)| (a + b) * T::lit(0.5))
            .collect();
        Self::new(rows, mid)
    }

    pub fn dim(&self) -> usize {
        self.slater_point.len()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Largest constraint violation `max_l (psi_l . h - nu_l)^+`.
    pub fn violation(&self, h: &[T]) -> T {
        self.rows
            .iter()
            .fold(T::zero(), |acc, row| acc.max(dot(&row.psi, h) - row.nu))
    }

    pub fn contains(&self, h: &[T]) -> bool {
        let scale = T::one() + max_abs(h);
        self.violation(h) <= T::lit(K_TOL) * scale
    }

    /// Lists violated structural conditions (empty when the set is usable).
    pub fn check(&self) -> Vec<(String, String)> {
        let mut issues = Vec::new();
        for (l, row) in self.rows.iter().enumerate() {
            let slack = row.nu - dot(&row.psi, &self.slater_point);
            if !(slack > T::zero()) {
                issues.push((
                    format!("constraints.rows[{l}]"),
                    format!("slater point is not strictly feasible (slack {slack})"),
                ));
            }
            if row.nu < T::zero() {
                issues.push((
                    format!("constraints.rows[{l}].nu"),
                    format!("origin violates the constraint (nu = {})", row.nu),
                ));
            }
        }
        if issues.is_empty() {
            if let Err(e) = self.coordinate_bounds() {
                issues.push(("constraints".into(), e.to_string()));
            }
        }
        issues
    }

    /// Vertices of `K`, found by enumerating every `n`-subset of active rows.
    pub fn vertices(&self) -> Vec<Vec<T>> {
        vertices_of(&self.rows, self.dim())
    }

    /// `(min h_i, max h_i)` over `K` for every coordinate.
    ///
    /// These are the 2n linear programs `max +-e_i . h`; their optima sit at
    /// vertices. Unboundedness is detected by adding a large box and checking
    /// whether any optimum lands on it.
    pub fn coordinate_bounds(&self) -> Result<Vec<(T, T)>> {
        let n = self.dim();
        let scale = self
            .rows
            .iter()
            .fold(T::one(), |acc, r| acc.max(r.nu.abs()).max(max_abs(&r.psi)));
        let big = T::lit(1e8) * scale;
        let mut rows = self.rows.clone();
        for i in 0..n {
            let mut psi = vec![T::zero(); n];
            psi[i] = T::one();
            rows.push(LinearConstraint { psi: psi.clone(), nu: big });
            psi[i] = -T::one();
            rows.push(LinearConstraint { psi, nu: big });
        }
        let verts = vertices_of(&rows, n);
        if verts.is_empty() {
            return Err(Error::Infeasible("no vertex found".into()));
        }
        let mut bounds = vec![(T::lit(f64::INFINITY), -T::lit(f64::INFINITY)); n];
        for v in &verts {
            for i in 0..n {
                bounds[i].0 = bounds[i].0.min(v[i]);
                bounds[i].1 = bounds[i].1.max(v[i]);
            }
        }
        let half = big * T::lit(0.5);
        for (i, &(lo, hi)) in bounds.iter().enumerate() {
            if lo <= -half || hi >= half {
                return Err(Error::Config(format!(
                    "constraint set is unbounded along coordinate {}",
                    i + 1
                )));
            }
        }
        Ok(bounds)
    }
}

fn vertices_of<T: Real>(rows: &[LinearConstraint<T>], n: usize) -> Vec<Vec<T>> {
    let mut out: Vec<Vec<T>> = Vec::new();
    let tol = T::lit(1e-9);
    for subset in (0..rows.len()).combinations(n) {
        let a = DMatrix::from_fn(n, n, |i, j| rows[subset[i]].psi[j]);
        let b = DVector::from_iterator(n, subset.iter().map(|&l| rows[l].nu));
        let Some(x) = a.lu().solve(&b) else { continue };
        let x: Vec<T> = x.iter().copied().collect();
        if !x.iter().all(|v| v.is_finite()) {
            continue;
        }
        let scale = T::one() + max_abs(&x);
        let feasible = rows.iter().all(|r| dot(&r.psi, &x) - r.nu <= tol * scale);
        if !feasible {
            continue;
        }
        let dup = out
            .iter()
            .any(|v| v.iter().zip(&x).all(|(&p, &q)| (p - q).abs() <= tol * scale));
        if !dup {
            out.push(x);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_leverage_box_in_one_dimension() {
        let k = ConstraintSet::<f64>::short_leverage(1, -1.0, 2.0).unwrap();
        assert!(k.check().is_empty());
        let b = k.coordinate_bounds().unwrap();
        assert_eq!(b, vec![(-1.0, 2.0)]);
        let mut v = k.vertices();
        v.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
        assert_eq!(v, vec![vec![-1.0], vec![2.0]]);
    }

    #[test]
    fn two_asset_simplex_vertices() {
        let k = ConstraintSet::<f64>::short_leverage(2, -0.5, 1.5).unwrap();
        assert!(k.check().is_empty());
        assert_eq!(k.vertices().len(), 3);
        let b = k.coordinate_bounds().unwrap();
        assert!((b[0].0 + 0.5).abs() < 1e-12 && (b[0].1 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn detects_unbounded_and_bad_slater() {
        let k = ConstraintSet::new(
            vec![LinearConstraint { psi: vec![1.0], nu: 1.0 }],
            vec![0.0],
        )
        .unwrap();
        assert!(k.coordinate_bounds().is_err());
        assert!(!k.check().is_empty());
        let k = ConstraintSet::<f64>::boxed(&[0.0], &[1.0]).unwrap();
        let k = ConstraintSet::new(k.rows, vec![0.0]).unwrap();
        assert!(k.check().iter().any(|(_, m)| m.contains("slater")));
    }

    #[test]
    fn membership() {
        let k = ConstraintSet::<f64>::boxed(&[-1.0, -1.0], &[1.0, 2.0]).unwrap();
        assert!(k.contains(&[0.5, 1.9]));
        assert!(!k.contains(&[0.5, 2.1]));
        assert!((k.violation(&[1.5, 0.0]) - 0.5).abs() < 1e-15);
    }
}
