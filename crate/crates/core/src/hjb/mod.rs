//! Explicit monotone finite-difference solver for the dynamic programming
//! equation on `[0, T] x S`, with optional regularization, and extraction of
//! the optimal feedback policy.

mod io;
mod scheme;

use nalgebra::SymmetricEigen;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{b_clipped, hamiltonian_target, metric_projection, StrategyField};
use crate::error::{Error, Result};
use crate::grid::PiGrid;
use crate::model::Model;
use crate::scalar::Real;
use crate::simulation::SdeCoefficients;

pub use io::{read_value_grid, write_value_grid};
pub use scheme::{Discretization, GeneratorParts};

/// Levels used when the stability bound alone would allow fewer.
pub const MIN_TIME_STEPS: usize = 100;

/// Spatial and temporal resolution of a solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HjbGrid {
    /// Cells per unit length in each restricted coordinate.
    pub cells: usize,
    /// Number of time steps; chosen from the stability bound when absent.
    pub time_steps: Option<usize>,
    /// Safety factor on the stability bound.
    pub cfl: f64,
}

impl HjbGrid {
    pub fn new(cells: usize) -> Self {
        Self {
            cells,
            time_steps: None,
            cfl: 0.9,
        }
    }
}

/// Scheme metadata recorded with a solution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeMeta {
    pub dt: f64,
    pub dpi: f64,
    pub time_steps: usize,
    pub cells: usize,
    /// Extra cells on each side of the unit box (regularized solves only).
    pub extension_cells: usize,
    /// Largest `dt * total_rate` encountered; at most `cfl`.
    pub cfl_ratio: f64,
    /// Smallest weight of any explicit update; nonnegative for a monotone step.
    pub min_weight: f64,
    pub regularization: Option<f64>,
}

/// Value function and policy on a time-space grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ValueGrid<T> {
    pub t_nodes: Vec<T>,
    pub grid: PiGrid<T>,
    /// Flat storage indexed by `level * nodes + node`.
    pub values: Vec<T>,
    pub policy: StrategyField<T>,
    pub meta: SchemeMeta,
}

impl<T: Real> ValueGrid<T> {
    pub fn levels(&self) -> usize {
        self.t_nodes.len()
    }

    pub fn level(&self, n: usize) -> &[T] {
        let len = self.grid.len();
        &self.values[n * len..(n + 1) * len]
    }

    /// Value at `(t, pi)`: linear in time between levels, piecewise linear in the state.
    pub fn value_at(&self, t: T, pi: &[T]) -> T {
        let n = self.t_nodes.len();
        if n == 1 {
            return self.grid.interpolate(self.level(0), pi);
        }
        let idx = self.t_nodes.partition_point(|&s| s <= t).clamp(1, n - 1);
        let (t0, t1) = (self.t_nodes[idx - 1], self.t_nodes[idx]);
        let w = ((t - t0) / (t1 - t0)).max(T::zero()).min(T::one());
        let v0 = self.grid.interpolate(self.level(idx - 1), pi);
        let v1 = self.grid.interpolate(self.level(idx), pi);
        v0 + w * (v1 - v0)
    }

    /// Largest `|V^a - V^b|` over nodes of the restricted simplex and the
    /// given times, interpolating each solution at the common points.
    pub fn sup_distance(&self, other: &ValueGrid<T>, times: &[T]) -> T {
        let mut worst = T::zero();
        for n in 0..self.grid.len() {
            if !self.grid.in_simplex(n) {
                continue;
            }
            let x = self.grid.coords(n);
            for &t in times {
                worst = worst.max((self.value_at(t, &x) - other.value_at(t, &x)).abs());
            }
        }
        worst
    }
}

/// Grid for a solve: the restricted simplex, or for regularized solves a box
/// extending `min(1, 4 sqrt(T/m))` (rounded up to whole cells, and at least
/// two cells beyond the taper width) on every side.
pub fn solve_grid<T: Real>(model: &Model<T>, spec: &HjbGrid, m: Option<T>) -> Result<(PiGrid<T>, usize)> {
    let dim = model.states() - 1;
    if dim > 2 {
        return Err(Error::Config(format!(
            "the grid solver handles at most 3 states, got {}",
            model.states()
        )));
    }
    if spec.cells == 0 && dim > 0 {
        return Err(Error::Config("grid needs at least one cell".into()));
    }
    match m {
        None => Ok((PiGrid::simplex(dim, spec.cells), 0)),
        Some(m) => {
            if !(m >= T::one()) {
                return Err(Error::Config(format!("regularization level must be >= 1, got {m}")));
            }
            if dim == 0 {
                return Ok((PiGrid::simplex(0, spec.cells), 0));
            }
            let reach = (T::lit(4.0) * (model.horizon() / m).sqrt()).min(T::one()).as_f64();
            let h = 1.0 / spec.cells as f64;
            let min_cells = (model.eps.as_f64() / h).ceil() as usize + 2;
            let ext = ((reach / h).ceil() as usize).max(min_cells);
            Ok((PiGrid::extended(dim, spec.cells, ext), ext))
        }
    }
}

/// Proportions maximizing the Hamiltonian at a node with value `v` and
/// gradient `grad`. The gradient enters through the tapered coefficients.
fn node_policy<T: Real>(disc: &Discretization<'_, T>, node: usize, v: T, grad: &[T]) -> Result<Vec<T>> {
    let model = disc.model;
    let tau = disc.taper(node);
    let g: Vec<T> = grad.iter().map(|&x| x * tau).collect();
    let target = hamiltonian_target(model, disc.lifted(node), v, &g);
    Ok(metric_projection(&model.cov, &model.cov_inv, &target, &model.constraints)?.h)
}

/// Stable time step for the discretization: `cfl / max_i (rate_i)` with the
/// drift rate bounded over the vertices of `K`.
pub fn stable_dt<T: Real>(disc: &Discretization<'_, T>, cfl: f64) -> f64 {
    let worst = (0..disc.len())
        .into_par_iter()
        .map(|i| (disc.fixed_rate(i) + disc.max_drift_rate(i)).as_f64())
        .reduce(|| 0.0, f64::max);
    if worst > 0.0 {
        cfl / worst
    } else {
        f64::INFINITY
    }
}

/// Solves the dynamic programming equation backwards from `V(T) = 1`.
///
/// Each step freezes the policy from the next level (Hamiltonian maximizer
/// with the grid gradient), applies one explicit Markov-chain step of the
/// generator and discounts by `exp(-dt b)`. The discount is exact for the
/// zero-order term, so constant-state problems are solved without time error.
/// For `theta < 0` the infimum over `h` is attained at the same maximizer of
/// the concave `h`-part, so both signs share the update.
pub fn solve_hjb<T: Real>(model: &Model<T>, spec: &HjbGrid, m: Option<T>) -> Result<ValueGrid<T>> {
    let (grid, ext) = solve_grid(model, spec, m)?;
    let disc = Discretization::new(model, grid, m)?;
    let horizon = model.horizon().as_f64();
    let required = stable_dt(&disc, spec.cfl);
    let steps = match spec.time_steps {
        Some(n) => {
            let dt = horizon / n.max(1) as f64;
            if dt > required * (1.0 + 1e-12) {
                return Err(Error::Cfl { dt, required });
            }
            n.max(1)
        }
        None => ((horizon / required).ceil() as usize).max(MIN_TIME_STEPS),
    };
    let dt = T::lit(horizon / steps as f64);
    let nodes = disc.len();
    let assets = model.assets();
    let t_nodes: Vec<T> = (0..=steps)
        .map(|n| if n == steps { model.horizon() } else { dt * T::count(n) })
        .collect();

    let mut values = vec![T::zero(); (steps + 1) * nodes];
    values[steps * nodes..].iter_mut().for_each(|v| *v = T::one());
    let mut policy = StrategyField::new(t_nodes.clone(), disc.grid.clone(), assets);
    let zero_grad = vec![T::zero(); disc.grid.dim()];
    for i in 0..nodes {
        let h = node_policy(&disc, i, T::one(), &zero_grad)?;
        policy.set(steps, i, &h);
    }

    let mut cfl_ratio = 0.0f64;
    let mut min_weight = 1.0f64;
    for n in (0..steps).rev() {
        let (head, tail) = values.split_at_mut((n + 1) * nodes);
        let next = &tail[..nodes];
        let current = &mut head[n * nodes..];
        let updates: Vec<Result<(T, Vec<T>, f64)>> = (0..nodes)
            .into_par_iter()
            .map(|i| {
                let v = next[i];
                let grad = disc.gradient(next, i);
                let h = node_policy(&disc, i, v, &grad)?;
                let lg = disc.generator_parts(next, i, &h).total();
                let w = disc.self_weight(i, &h, dt).as_f64();
                let b = b_clipped(model, disc.lifted(i), &h);
                Ok(((-dt * b).exp() * (v + dt * lg), h, w))
            })
            .collect();
        let (lo, hi) = model.value_bounds(t_nodes[n]);
        let (lo, hi) = (lo * T::lit(0.99), hi * T::lit(1.01));
        for (i, u) in updates.into_iter().enumerate() {
            let (v, h, w) = u?;
            if !(v >= lo && v <= hi) {
                return Err(Error::Divergence(format!(
                    "V = {v} at t = {}, node {:?} is outside [{lo}, {hi}]",
                    t_nodes[n],
                    crate::scalar::to_f64_vec(&disc.grid.coords(i))
                )));
            }
            current[i] = v;
            policy.set(n, i, &h);
            cfl_ratio = cfl_ratio.max(1.0 - w);
            min_weight = min_weight.min(w);
        }
    }

    let meta = SchemeMeta {
        dt: dt.as_f64(),
        dpi: disc.grid.spacing().as_f64(),
        time_steps: steps,
        cells: spec.cells,
        extension_cells: ext,
        cfl_ratio,
        min_weight,
        regularization: m.map(|x| x.as_f64()),
    };
    Ok(ValueGrid {
        t_nodes,
        grid: disc.grid.clone(),
        values,
        policy,
        meta,
    })
}

/// Recomputes the policy of a solved grid: at level `n` the Hamiltonian
/// maximizer with the value and grid gradient of level `n + 1` (level `N`
/// uses itself).
pub fn extract_policy<T: Real>(model: &Model<T>, vg: &ValueGrid<T>) -> Result<StrategyField<T>> {
    let m = vg.meta.regularization.map(T::lit);
    let disc = Discretization::new(model, vg.grid.clone(), m)?;
    let levels = vg.levels();
    let nodes = vg.grid.len();
    let mut field = StrategyField::new(vg.t_nodes.clone(), vg.grid.clone(), model.assets());
    for n in 0..levels {
        let source = vg.level((n + 1).min(levels - 1));
        let rows: Vec<Result<Vec<T>>> = (0..nodes)
            .into_par_iter()
            .map(|i| node_policy(&disc, i, source[i], &disc.gradient(source, i)))
            .collect();
        for (i, h) in rows.into_iter().enumerate() {
            field.set(n, i, &h?);
        }
    }
    Ok(field)
}

/// Smallest eigenvalue of `beta^T beta + I / (2m)` at a restricted state
/// (`m = None` drops the regularization). The Gram matrix is positive
/// semidefinite; its computed eigenvalues are clamped at zero so rounding
/// cannot push the result below the regularization floor.
pub fn ellipticity_check<T: Real>(model: &Model<T>, pi: &[T], m: Option<T>) -> T {
    let floor = m.map_or(T::zero(), |m| T::one() / (m + m));
    if pi.is_empty() {
        return floor;
    }
    let beta = SdeCoefficients::new(model).diffusion(pi);
    let gram = beta.transpose() * &beta;
    let eig = SymmetricEigen::new(gram);
    let min = eig.eigenvalues.iter().fold(T::lit(f64::INFINITY), |acc, &e| acc.min(e));
    min.max(T::zero()) + floor
}

#[cfg(test)]
mod tests;
