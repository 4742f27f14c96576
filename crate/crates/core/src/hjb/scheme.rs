use rayon::prelude::*;

use crate::error::Result;
use crate::grid::PiGrid;
use crate::model::{lift_unchecked, Model};
use crate::scalar::{norm2, Real};
use crate::simulation::SdeCoefficients;

/// Sparse transition rates out of one node: `(target node, rate)`.
type Row<T> = Vec<(usize, T)>;

/// Contributions of the individual generator terms at a node.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GeneratorParts<T> {
    pub drift: T,
    pub diffusion: T,
    pub jump: T,
    pub regularization: T,
}

impl<T: Real> GeneratorParts<T> {
    pub fn total(&self) -> T {
        self.drift + self.diffusion + self.jump + self.regularization
    }
}

/// Markov-chain approximation of the state generator on a grid.
///
/// Every term is written as `sum_j rate_j (g(y_j) - g(x))` with nonnegative
/// rates and `y_j` either a node or a point whose value is interpolated with
/// nonnegative weights, so the explicit step is monotone once
/// `dt * total_rate <= 1`.
///
/// * Diffusion: `1/2 |w|^2 d^2/ds^2` along each row `w` of the restricted
///   diffusion matrix. Grid-aligned directions use neighbouring nodes; other
///   directions use interpolated points at distance `max(2 h, sqrt h)`,
///   shortened so that both points stay in the domain. Near a face the
///   diffusion vanishes at least linearly, so the shortened rates stay bounded.
/// * Jumps: tensor quadrature over the uniform marks.
/// * Drift (depends on `h`): upwind step of length `h` along the drift.
/// * Regularization: `1/(2m)` times the axis Laplacian; missing neighbours at
///   the edge of the box are reflected.
pub struct Discretization<'m, T: Real> {
    pub model: &'m Model<T>,
    pub grid: PiGrid<T>,
    pub m: Option<T>,
    coords: Vec<Vec<T>>,
    lifted: Vec<Vec<T>>,
    taper: Vec<T>,
    diffusion: Vec<Row<T>>,
    jump: Vec<Row<T>>,
    regularization: Vec<Row<T>>,
}

fn row_rate<T: Real>(row: &Row<T>) -> T {
    row.iter().fold(T::zero(), |acc, e| acc + e.1)
}

fn apply_row<T: Real>(row: &Row<T>, g: &[T], gi: T) -> T {
    row.iter().fold(T::zero(), |acc, &(j, r)| acc + r * (g[j] - gi))
}

impl<'m, T: Real> Discretization<'m, T> {
    pub fn new(model: &'m Model<T>, grid: PiGrid<T>, m: Option<T>) -> Result<Self> {
        let coeffs = SdeCoefficients::new(model);
        let nodes = grid.len();
        let coords: Vec<Vec<T>> = (0..nodes).map(|i| grid.coords(i)).collect();
        let lifted = coords.iter().map(|x| lift_unchecked(x)).collect();
        let taper: Vec<T> = coords.iter().map(|x| coeffs.taper(x)).collect();
        let rows: Vec<Result<(Row<T>, Row<T>, Row<T>)>> = (0..nodes)
            .into_par_iter()
            .map(|i| {
                let x = &coords[i];
                Ok((
                    diffusion_row(&coeffs, &grid, i, x, taper[i]),
                    jump_row(&coeffs, &grid, x, taper[i])?,
                    regularization_row(&grid, i, m),
                ))
            })
            .collect();
        let mut diffusion = Vec::with_capacity(nodes);
        let mut jump = Vec::with_capacity(nodes);
        let mut regularization = Vec::with_capacity(nodes);
        for r in rows {
            let (d, j, l) = r?;
            diffusion.push(d);
            jump.push(j);
            regularization.push(l);
        }
        Ok(Self {
            model,
            grid,
            m,
            coords,
            lifted,
            taper,
            diffusion,
            jump,
            regularization,
        })
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn coords(&self, node: usize) -> &[T] {
        &self.coords[node]
    }

    pub fn lifted(&self, node: usize) -> &[T] {
        &self.lifted[node]
    }

    pub fn taper(&self, node: usize) -> T {
        self.taper[node]
    }

    /// Total rate of the `h`-independent terms at a node.
    pub fn fixed_rate(&self, node: usize) -> T {
        row_rate(&self.diffusion[node]) + row_rate(&self.jump[node]) + row_rate(&self.regularization[node])
    }

    /// Tapered drift at a node under proportions `h`.
    pub fn drift(&self, node: usize, h: &[T]) -> Vec<T> {
        let t = self.taper[node];
        if self.grid.dim() == 0 || t == T::zero() {
            return vec![T::zero(); self.grid.dim()];
        }
        SdeCoefficients::new(self.model)
            .drift(&self.coords[node], h)
            .into_iter()
            .map(|a| a * t)
            .collect()
    }

    /// Upwind drift rate `|a| / h` at a node.
    pub fn drift_rate(&self, node: usize, h: &[T]) -> T {
        norm2(&self.drift(node, h)) / self.grid.spacing()
    }

    /// Upper bound on the drift rate over `K`, using that the drift is affine
    /// in `h` and `K` is the hull of its vertices.
    pub fn max_drift_rate(&self, node: usize) -> T {
        self.model
            .k_vertices
            .iter()
            .fold(T::zero(), |acc, v| acc.max(self.drift_rate(node, v)))
    }

    fn drift_term(&self, node: usize, h: &[T], g: &[T], st: &mut Vec<(usize, T)>) -> T {
        let a = self.drift(node, h);
        let speed = norm2(&a);
        if speed == T::zero() {
            return T::zero();
        }
        let step = self.grid.spacing();
        let x = &self.coords[node];
        let y: Vec<T> = x.iter().zip(&a).map(|(&xi, &ai)| xi + step * ai / speed).collect();
        self.grid.stencil(&y, st);
        let gy = st.iter().fold(T::zero(), |acc, &(j, w)| acc + w * g[j]);
        speed / step * (gy - g[node])
    }

    /// Discrete generator applied to the grid function `g` at a node.
    pub fn generator_parts(&self, g: &[T], node: usize, h: &[T]) -> GeneratorParts<T> {
        let gi = g[node];
        let mut st = Vec::with_capacity(3);
        GeneratorParts {
            drift: self.drift_term(node, h, g, &mut st),
            diffusion: apply_row(&self.diffusion[node], g, gi),
            jump: apply_row(&self.jump[node], g, gi),
            regularization: apply_row(&self.regularization[node], g, gi),
        }
    }

    /// Smallest weight placed on any value in one explicit step of size `dt`
    /// (the self weight; all other weights are rates times `dt`).
    pub fn self_weight(&self, node: usize, h: &[T], dt: T) -> T {
        T::one() - dt * (self.fixed_rate(node) + self.drift_rate(node, h))
    }

    /// Grid gradient of `g` at a node: central differences where both axis
    /// neighbours exist, one-sided otherwise.
    pub fn gradient(&self, g: &[T], node: usize) -> Vec<T> {
        let h = self.grid.spacing();
        (0..self.grid.dim())
            .map(|a| match self.grid.axis_neighbors(node, a) {
                (Some(b), Some(f)) => (g[f] - g[b]) / (h + h),
                (None, Some(f)) => (g[f] - g[node]) / h,
                (Some(b), None) => (g[node] - g[b]) / h,
                (None, None) => T::zero(),
            })
            .collect()
    }
}

fn push_stencil<T: Real>(grid: &PiGrid<T>, y: &[T], rate: T, st: &mut Vec<(usize, T)>, row: &mut Row<T>) {
    grid.stencil(y, st);
    row.extend(st.iter().filter(|e| e.1 > T::zero()).map(|&(j, w)| (j, rate * w)));
}

fn diffusion_row<T: Real>(coeffs: &SdeCoefficients<'_, T>, grid: &PiGrid<T>, node: usize, x: &[T], taper: T) -> Row<T> {
    let mut row = Vec::new();
    let dim = grid.dim();
    if dim == 0 || taper == T::zero() {
        return row;
    }
    let beta = coeffs.diffusion(x) * taper;
    let h = grid.spacing();
    let [i, j] = grid.index(node);
    let tiny = T::lit(1e-12);
    let mut st = Vec::with_capacity(3);
    for r in 0..beta.nrows() {
        let w: Vec<T> = (0..dim).map(|c| beta[(r, c)]).collect();
        let len = norm2(&w);
        if len <= T::lit(1e-300) {
            continue;
        }
        let half = T::lit(0.5) * len * len;
        // Grid-aligned directions reach nodes exactly.
        let aligned: Option<([i64; 2], T)> = if dim == 1 {
            Some(([1, 0], h))
        } else if w[1].abs() <= tiny * len {
            Some(([1, 0], h))
        } else if w[0].abs() <= tiny * len {
            Some(([0, 1], h))
        } else if (w[0] + w[1]).abs() <= tiny * len {
            Some(([1, -1], h * T::lit(2.0).sqrt()))
        } else {
            None
        };
        if let Some((dir, k)) = aligned {
            let rate = half / (k * k);
            for s in [1i64, -1] {
                if let Some(n) = grid.node_at(i + s * dir[0], j + s * dir[1]) {
                    row.push((n, rate));
                }
            }
            continue;
        }
        let unit: Vec<T> = w.iter().map(|&c| c / len).collect();
        let neg: Vec<T> = unit.iter().map(|&c| -c).collect();
        let wide = (h + h).max(h.sqrt());
        let k = wide.min(grid.max_step(x, &unit)).min(grid.max_step(x, &neg));
        if k <= T::lit(1e-12) {
            continue;
        }
        let rate = half / (k * k);
        for u in [&unit, &neg] {
            let y: Vec<T> = x.iter().zip(u.iter()).map(|(&xi, &ui)| xi + k * ui).collect();
            push_stencil(grid, &y, rate, &mut st, &mut row);
        }
    }
    row
}

fn jump_row<T: Real>(coeffs: &SdeCoefficients<'_, T>, grid: &PiGrid<T>, x: &[T], taper: T) -> Result<Row<T>> {
    let mut row = Vec::new();
    let model = coeffs.model;
    let lambda = model.lambda();
    if grid.dim() == 0 || taper == T::zero() || lambda == T::zero() {
        return Ok(row);
    }
    let rule = &model.mark_rule;
    let mut st = Vec::with_capacity(3);
    for q in 0..rule.len() {
        let jump = coeffs.jump(x, rule.point(q))?;
        let y: Vec<T> = x.iter().zip(&jump).map(|(&xi, &ji)| xi + taper * ji).collect();
        push_stencil(grid, &y, lambda * rule.weights[q], &mut st, &mut row);
    }
    Ok(row)
}

fn regularization_row<T: Real>(grid: &PiGrid<T>, node: usize, m: Option<T>) -> Row<T> {
    let mut row = Vec::new();
    let Some(m) = m else { return row };
    let h = grid.spacing();
    let rate = T::one() / ((m + m) * h * h);
    for a in 0..grid.dim() {
        let (b, f) = grid.axis_neighbors(node, a);
        row.extend(b.into_iter().chain(f).map(|n| (n, rate)));
    }
    row
}
