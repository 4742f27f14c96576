//! Uniform grids over the restricted simplex (or a box around it) with
//! piecewise-linear interpolation.

use serde::{Deserialize, Serialize};

use crate::model::project_to_restricted;
use crate::scalar::{sum, Real};

/// Shape of the node set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GridDomain {
    /// Nodes with nonnegative indices summing to at most `cells`.
    Simplex,
    /// All indices in `[lo, hi]^dim`.
    Box,
}

/// Grid with spacing `1 / cells` on the restricted simplex, `dim = d - 1 <= 2`.
///
/// Two-dimensional grids interpolate on the triangulation that splits every
/// cell along its anti-diagonal, so interpolation weights are nonnegative and
/// the simplex is covered exactly.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PiGrid<T> {
    dim: usize,
    cells: usize,
    spacing: T,
    lo: i64,
    hi: i64,
    domain: GridDomain,
    nodes: Vec<[i64; 2]>,
    lookup: Vec<u32>,
}

const NONE: u32 = u32::MAX;

impl<T: Real> PiGrid<T> {
    /// Grid covering the restricted simplex.
    pub fn simplex(dim: usize, cells: usize) -> Self {
        let domain = if dim == 2 { GridDomain::Simplex } else { GridDomain::Box };
        Self::build(dim, cells, 0, cells as i64, domain)
    }

    /// Box `[-ext, 1 + ext]^dim` with `ext = extension_cells / cells`.
    pub fn extended(dim: usize, cells: usize, extension_cells: usize) -> Self {
        let e = extension_cells as i64;
        Self::build(dim, cells, -e, cells as i64 + e, GridDomain::Box)
    }

    fn build(dim: usize, cells: usize, lo: i64, hi: i64, domain: GridDomain) -> Self {
        assert!(dim <= 2, "grids support at most two restricted dimensions");
        assert!(cells >= 1 || dim == 0);
        let cells = cells.max(1);
        let width = (hi - lo + 1) as usize;
        let mut nodes = Vec::new();
        match dim {
            0 => nodes.push([0, 0]),
            1 => nodes.extend((lo..=hi).map(|i| [i, 0])),
            _ => {
                for i in lo..=hi {
                    for j in lo..=hi {
                        if domain == GridDomain::Box || i + j <= cells as i64 {
                            nodes.push([i, j]);
                        }
                    }
                }
            }
        }
        let mut lookup = vec![NONE; if dim == 2 { width * width } else { width }];
        let mut grid = Self {
            dim,
            cells,
            spacing: T::one() / T::count(cells),
            lo,
            hi,
            domain,
            nodes: Vec::new(),
            lookup: Vec::new(),
        };
        for (n, idx) in nodes.iter().enumerate() {
            if dim > 0 {
                lookup[grid.slot(idx[0], idx[1])] = n as u32;
            }
        }
        grid.nodes = nodes;
        grid.lookup = lookup;
        grid
    }

    fn slot(&self, i: i64, j: i64) -> usize {
        let w = (self.hi - self.lo + 1) as usize;
        if self.dim == 1 {
            (i - self.lo) as usize
        } else {
            (i - self.lo) as usize * w + (j - self.lo) as usize
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn spacing(&self) -> T {
        self.spacing
    }

    pub fn domain(&self) -> GridDomain {
        self.domain
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Integer indices of a node.
    pub fn index(&self, node: usize) -> [i64; 2] {
        self.nodes[node]
    }

    /// Node with the given integer indices, if present.
    pub fn node_at(&self, i: i64, j: i64) -> Option<usize> {
        match self.dim {
            0 => Some(0),
            _ => {
                if i < self.lo || i > self.hi {
                    return None;
                }
                if self.dim == 2 && (j < self.lo || j > self.hi) {
                    return None;
                }
                let v = self.lookup[self.slot(i, if self.dim == 2 { j } else { 0 })];
                (v != NONE).then_some(v as usize)
            }
        }
    }

    /// Coordinates of a node.
    pub fn coords(&self, node: usize) -> Vec<T> {
        let idx = self.nodes[node];
        (0..self.dim).map(|a| self.coord(idx[a])).collect()
    }

    fn coord(&self, i: i64) -> T {
        if i >= 0 {
            T::count(i as usize) * self.spacing
        } else {
            -(T::count((-i) as usize) * self.spacing)
        }
    }

    /// Whether the node lies in the restricted simplex.
    pub fn in_simplex(&self, node: usize) -> bool {
        let idx = self.nodes[node];
        (0..self.dim).all(|a| idx[a] >= 0) && (0..self.dim).map(|a| idx[a]).sum::<i64>() <= self.cells as i64
    }

    /// Neighbours along an axis, `(backward, forward)`.
    pub fn axis_neighbors(&self, node: usize, axis: usize) -> (Option<usize>, Option<usize>) {
        let idx = self.nodes[node];
        let mut b = idx;
        let mut f = idx;
        b[axis] -= 1;
        f[axis] += 1;
        (self.node_at(b[0], b[1]), self.node_at(f[0], f[1]))
    }

    /// Closest point of the grid's domain.
    pub fn project(&self, x: &[T]) -> Vec<T> {
        match (self.dim, self.domain) {
            (0, _) => Vec::new(),
            (_, GridDomain::Simplex) => project_to_restricted(x),
            (_, GridDomain::Box) => {
                let (lo, hi) = (self.coord(self.lo), self.coord(self.hi));
                x.iter().map(|&v| v.max(lo).min(hi)).collect()
            }
        }
    }

    /// Interpolation stencil at `x` (projected onto the domain first):
    /// pairs of node and nonnegative weight summing to one.
    pub fn stencil(&self, x: &[T], out: &mut Vec<(usize, T)>) {
        out.clear();
        if self.dim == 0 {
            out.push((0, T::one()));
            return;
        }
        let y = self.project(x);
        let locate = |v: T| -> (i64, T) {
            let s = v / self.spacing;
            let f = s.floor();
            let mut i = f.to_i64().unwrap_or(0);
            i = i.clamp(self.lo, self.hi - 1);
            let frac = (s - self.coord(i) / self.spacing).max(T::zero()).min(T::one());
            (i, frac)
        };
        if self.dim == 1 {
            let (i, f) = locate(y[0]);
            let a = self.node_at(i, 0).expect("interior node");
            let b = self.node_at(i + 1, 0).expect("interior node");
            out.push((a, T::one() - f));
            out.push((b, f));
            return;
        }
        let (i, mut fx) = locate(y[0]);
        let (j, mut fy) = locate(y[1]);
        if self.domain == GridDomain::Simplex && i + j >= self.cells as i64 {
            // Only reachable on the hypotenuse up to rounding.
            let n = self.node_at(i, j).or_else(|| self.node_at(i, self.cells as i64 - i)).expect("hypotenuse node");
            out.push((n, T::one()));
            return;
        }
        let upper = self.node_at(i + 1, j + 1);
        if fx + fy > T::one() {
            if let Some(n11) = upper {
                out.push((n11, fx + fy - T::one()));
                out.push((self.node_at(i + 1, j).unwrap(), T::one() - fy));
                out.push((self.node_at(i, j + 1).unwrap(), T::one() - fx));
                return;
            }
            let s = fx + fy;
            fx /= s;
            fy /= s;
        }
        out.push((self.node_at(i, j).unwrap(), (T::one() - fx - fy).max(T::zero())));
        out.push((self.node_at(i + 1, j).unwrap(), fx));
        out.push((self.node_at(i, j + 1).unwrap(), fy));
    }

    /// Interpolated value of a grid function at `x`.
    pub fn interpolate(&self, values: &[T], x: &[T]) -> T {
        let mut st = Vec::with_capacity(3);
        self.stencil(x, &mut st);
        st.iter().fold(T::zero(), |acc, &(n, w)| acc + w * values[n])
    }

    /// Largest `s >= 0` such that `x + s * dir` stays in the domain.
    pub fn max_step(&self, x: &[T], dir: &[T]) -> T {
        let mut best = T::lit(f64::INFINITY);
        let mut limit = |slack: T, rate: T| {
            if rate > T::zero() {
                best = best.min((slack / rate).max(T::zero()));
            }
        };
        match self.domain {
            GridDomain::Box => {
                let (lo, hi) = (self.coord(self.lo), self.coord(self.hi));
                for a in 0..self.dim {
                    limit(hi - x[a], dir[a]);
                    limit(x[a] - lo, -dir[a]);
                }
            }
            GridDomain::Simplex => {
                for a in 0..self.dim {
                    limit(x[a], -dir[a]);
                }
                limit(T::one() - sum(x), sum(dir));
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn node_counts() {
        assert_eq!(PiGrid::<f64>::simplex(0, 10).len(), 1);
        assert_eq!(PiGrid::<f64>::simplex(1, 10).len(), 11);
        assert_eq!(PiGrid::<f64>::simplex(2, 10).len(), 66);
        assert_eq!(PiGrid::<f64>::extended(1, 10, 3).len(), 17);
        assert_eq!(PiGrid::<f64>::extended(2, 4, 1).len(), 49);
    }

    #[test]
    fn linear_functions_are_reproduced() {
        let f = |x: &[f64]| 0.3 + 1.7 * x[0] - 0.4 * x[1];
        for grid in [PiGrid::<f64>::simplex(2, 7), PiGrid::<f64>::extended(2, 5, 2)] {
            let vals: Vec<f64> = (0..grid.len()).map(|n| f(&grid.coords(n))).collect();
            for &(x, y) in &[(0.1, 0.2), (0.33, 0.61), (0.0, 1.0), (0.5, 0.5), (0.9, 0.05)] {
                let got = grid.interpolate(&vals, &[x, y]);
                assert!((got - f(&[x, y])).abs() < 1e-12, "{x} {y} {got}");
            }
        }
        let g1 = PiGrid::<f64>::simplex(1, 8);
        let vals: Vec<f64> = (0..g1.len()).map(|n| 2.0 * g1.coords(n)[0] - 1.0).collect();
        assert!((g1.interpolate(&vals, &[0.37]) + 0.26).abs() < 1e-12);
        assert!((g1.interpolate(&vals, &[1.3]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stencil_weights_are_convex() {
        let grid = PiGrid::<f64>::simplex(2, 9);
        let mut st = Vec::new();
        for &(x, y) in &[(0.7, 0.7), (-0.2, 0.4), (0.21, 0.13), (0.5, 0.5)] {
            grid.stencil(&[x, y], &mut st);
            let s: f64 = st.iter().map(|e| e.1).sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(st.iter().all(|e| e.1 >= 0.0));
        }
    }

    #[test]
    fn max_step_in_triangle() {
        let grid = PiGrid::<f64>::simplex(2, 4);
        let s = grid.max_step(&[0.2, 0.2], &[1.0, 1.0]);
        assert!((s - 0.3).abs() < 1e-12);
        let s = grid.max_step(&[0.2, 0.2], &[-1.0, 0.0]);
        assert!((s - 0.2).abs() < 1e-12);
    }
}
