use serde::{Deserialize, Serialize};

use crate::control::Policy;
use crate::error::{Error, Result};
use crate::hjb::ValueGrid;
use crate::model::Model;
use crate::scalar::Real;

use super::{discounted_samples, Estimate, SimSpec};

/// Comparison of the grid value with a one-step Bellman estimate.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DppReport {
    pub t: f64,
    pub delta: f64,
    /// `V(t, pi)` from the grid.
    pub value: f64,
    /// `E[exp(-int_t^{t+delta} b~) V(t + delta, pi_{t+delta})]` per candidate.
    pub candidates: Vec<(String, Estimate)>,
    /// Index of the candidate with the largest estimate (smallest for `theta < 0`).
    pub best: usize,
    /// Best estimate minus `value`.
    pub gap: f64,
    pub stderr: f64,
    /// Scheme error allowance added to the tolerance.
    pub budget: f64,
    /// `|gap| <= 3 stderr + budget`, plus `1e-12 |value|` for rounding when the estimate has no variance.
    pub within: bool,
    /// The estimate falls below the grid value by more than one standard error.
    pub below_value: bool,
}

/// `|V_h(t, pi) - V_{h/2}(t, pi)|` between two grid resolutions.
pub fn refinement_budget<T: Real>(coarse: &ValueGrid<T>, fine: &ValueGrid<T>, t: T, pi: &[T]) -> f64 {
    (coarse.value_at(t, pi) - fine.value_at(t, pi)).abs().as_f64()
}

/// One-step dynamic programming check at `(t, pi)` over a finite candidate
/// set, with common random numbers across candidates.
#[allow(clippy::too_many_arguments)]
pub fn dpp_check<T: Real>(
    model: &Model<T>,
    vg: &ValueGrid<T>,
    t: T,
    pi: &[T],
    delta: T,
    candidates: &[(String, &dyn Policy<T>)],
    sim: &SimSpec,
    budget: f64,
) -> Result<DppReport> {
    if t + delta > model.horizon() + T::lit(1e-12) || delta < T::zero() {
        return Err(Error::Domain(format!("need 0 <= delta and t + delta <= T, got t = {t}, delta = {delta}")));
    }
    if candidates.is_empty() {
        return Err(Error::Config("dpp check needs at least one candidate".into()));
    }
    let value = vg.value_at(t, pi).as_f64();
    let end = t + delta;
    let mut estimates = Vec::with_capacity(candidates.len());
    for (label, policy) in candidates {
        let xs = discounted_samples(model, *policy, t, end, pi, sim, None, |x| vg.value_at(end, x))?;
        estimates.push((label.clone(), Estimate::from_samples(&xs)));
    }
    let minimize = model.theta() < T::zero();
    let best = (0..estimates.len())
        .reduce(|a, b| {
            let (ea, eb) = (estimates[a].1.mean, estimates[b].1.mean);
            if (minimize && eb < ea) || (!minimize && eb > ea) {
                b
            } else {
                a
            }
        })
        .expect("non-empty");
    let e = estimates[best].1;
    let gap = e.mean - value;
    Ok(DppReport {
        t: t.as_f64(),
        delta: delta.as_f64(),
        value,
        candidates: estimates,
        best,
        gap,
        stderr: e.stderr,
        budget,
        within: gap.abs() <= 3.0 * e.stderr + budget + 1e-12 * value.abs(),
        below_value: gap < -e.stderr,
    })
}
