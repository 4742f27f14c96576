use serde::{Deserialize, Serialize};

use crate::grid::PiGrid;
use crate::model::{lift_unchecked, Model};
use crate::scalar::Real;

use super::{merton_point, metric_projection, Strategy};

/// Feedback rule mapping time and restricted state to proportions.
pub trait Policy<T: Real>: Sync {
    fn action(&self, t: T, pi: &[T], out: &mut Vec<T>);
    fn label(&self) -> String;
}

impl<T: Real> Policy<T> for Strategy<T> {
    fn action(&self, _t: T, _pi: &[T], out: &mut Vec<T>) {
        out.clear();
        out.extend_from_slice(&self.h);
    }

    fn label(&self) -> String {
        format!("constant{:?}", crate::scalar::to_f64_vec(&self.h))
    }
}

/// Projected Merton proportions at the current filter state.
pub struct MyopicPolicy<'m, T: Real> {
    pub model: &'m Model<T>,
}

impl<T: Real> Policy<T> for MyopicPolicy<'_, T> {
    fn action(&self, _t: T, pi: &[T], out: &mut Vec<T>) {
        let p = lift_unchecked(&crate::model::project_to_restricted(pi));
        let target = merton_point(self.model, &p);
        let sol = metric_projection(&self.model.cov, &self.model.cov_inv, &target, &self.model.constraints)
            .expect("constraint set is nonempty");
        out.clear();
        out.extend_from_slice(&sol.h);
    }

    fn label(&self) -> String {
        "myopic".into()
    }
}

/// Proportions stored per time level and grid node.
///
/// Lookup uses the nearest time level and piecewise-linear interpolation in
/// the state; interpolation weights are nonnegative, so values stay in `K`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StrategyField<T> {
    pub t_nodes: Vec<T>,
    pub grid: PiGrid<T>,
    pub assets: usize,
    /// Flat storage indexed by `(level * nodes + node) * assets + a`.
    pub values: Vec<T>,
}

impl<T: Real> StrategyField<T> {
    pub fn new(t_nodes: Vec<T>, grid: PiGrid<T>, assets: usize) -> Self {
        let len = t_nodes.len() * grid.len() * assets;
        Self {
            t_nodes,
            grid,
            assets,
            values: vec![T::zero(); len],
        }
    }

    pub fn at(&self, level: usize, node: usize) -> &[T] {
        let start = (level * self.grid.len() + node) * self.assets;
        &self.values[start..start + self.assets]
    }

    pub fn set(&mut self, level: usize, node: usize, h: &[T]) {
        let start = (level * self.grid.len() + node) * self.assets;
        self.values[start..start + self.assets].copy_from_slice(h);
    }

    /// Level whose time is nearest to `t`.
    pub fn nearest_level(&self, t: T) -> usize {
        let n = self.t_nodes.len();
        let idx = self.t_nodes.partition_point(|&s| s < t);
        if idx == 0 {
            0
        } else if idx >= n {
            n - 1
        } else if t - self.t_nodes[idx - 1] <= self.t_nodes[idx] - t {
            idx - 1
        } else {
            idx
        }
    }

    /// Largest constraint violation over every stored entry.
    pub fn max_violation(&self, k: &crate::model::ConstraintSet<T>) -> T {
        self.values
            .chunks(self.assets)
            .fold(T::zero(), |acc, h| acc.max(k.violation(h)))
    }
}

impl<T: Real> Policy<T> for StrategyField<T> {
    fn action(&self, t: T, pi: &[T], out: &mut Vec<T>) {
        let level = self.nearest_level(t);
        let mut st = Vec::with_capacity(3);
        self.grid.stencil(pi, &mut st);
        out.clear();
        out.resize(self.assets, T::zero());
        for &(node, w) in &st {
            let h = self.at(level, node);
            for a in 0..self.assets {
                out[a] += w * h[a];
            }
        }
    }

    fn label(&self) -> String {
        "grid-policy".into()
    }
}
