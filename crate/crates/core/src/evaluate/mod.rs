//! Monte Carlo estimation of rewards and the empirical checks built on it:
//! dynamic programming, moment estimates, regularization convergence,
//! epsilon-optimality and time continuity of the value function.

mod continuity;
mod convergence;
mod dpp;
mod moments;
mod reward;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub use continuity::{continuity_study, ContinuityReport};
pub use convergence::{
    epsilon_optimality_study, l2_convergence_study, reward_convergence_study, EpsOptLevel, EpsOptReport,
    L2Report, L2Strategy, RewardConvergenceReport,
};
pub use dpp::{dpp_check, refinement_budget, DppReport};
pub use moments::{default_deltas, moment_suite, MomentReport, MomentRow};
pub use reward::{discounted_samples, mc_reward, reward_samples, time_steps, SimSpec, MIN_PATHS};

/// Sample mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub paths: usize,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                stderr: f64::NAN,
                paths: 0,
            };
        }
        // Shifted by the first sample: exact for constant samples, and less
        // cancellation when the spread is small relative to the level.
        let shift = xs[0];
        let mean = shift + xs.iter().map(|x| x - shift).sum::<f64>() / n as f64;
        let var = if n > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            mean,
            stderr: (var / n as f64).sqrt(),
            paths: n,
        }
    }

    /// Estimate of `E[a - b]` from paired samples.
    pub fn paired(a: &[f64], b: &[f64]) -> Self {
        assert_eq!(a.len(), b.len(), "paired samples must have equal length");
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        Self::from_samples(&d)
    }
}

/// Least-squares slope of `ln y` against `ln x`; `None` unless every value is
/// positive and finite and at least two distinct `x` are given.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    if x.iter().chain(y).any(|v| !(v.is_finite() && *v > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    Some(sxy / sxx)
}

/// One named pass/fail assertion of a study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

/// Long-format output row: `study, m, metric, value, stderr`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LongRow {
    pub study: String,
    pub m: Option<f64>,
    pub metric: String,
    pub value: f64,
    pub stderr: Option<f64>,
}

impl LongRow {
    pub fn new(study: &str, m: Option<f64>, metric: impl Into<String>, value: f64, stderr: Option<f64>) -> Self {
        Self {
            study: study.into(),
            m,
            metric: metric.into(),
            value,
            stderr,
        }
    }

    pub fn estimate(study: &str, m: Option<f64>, metric: impl Into<String>, e: &Estimate) -> Self {
        Self::new(study, m, metric, e.mean, Some(e.stderr))
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v}")).unwrap_or_default()
}

pub fn write_long_csv(rows: &[LongRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["study", "m", "metric", "value", "stderr"])?;
    for r in rows {
        w.write_record([r.study.clone(), opt(r.m), r.metric.clone(), format!("{}", r.value), opt(r.stderr)])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests;
