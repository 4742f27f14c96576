use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::Strategy;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::rng::path_rng;
use crate::scalar::{dist2_sq, Real};
use crate::simulation::{run_state, Mode, NoiseRecord, SdeCoefficients};

use super::{log_log_slope, Estimate, SimSpec};

/// Steps per horizon used at the smallest horizons, so that running suprema
/// are resolved even when `delta` is only a few simulation steps.
const MIN_STEPS: usize = 32;

/// Mean squared increments below this count as exactly zero (rounding level).
const DEGENERATE: f64 = 1e-24;

/// Horizons `T 2^-k`, `k = 3..=8`.
pub fn default_deltas(horizon: f64) -> Vec<f64> {
    (3..=8).map(|k| horizon * 0.5f64.powi(k)).collect()
}

/// Moment estimates at one horizon `delta`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MomentRow {
    pub delta: f64,
    /// `E |pi_delta|^2`.
    pub second_moment: Estimate,
    /// `E |pi_delta - pi|^2`.
    pub increment: Estimate,
    /// `E sup_{s <= delta} |pi_s - pi|^2`.
    pub sup_increment: Estimate,
    /// `E |pi_delta^(pi) - pi_delta^(xi)|^2` for paired starts.
    pub paired: Estimate,
    /// `paired / |pi - xi|^2`; absent when the starts coincide.
    pub paired_ratio: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MomentReport {
    pub rows: Vec<MomentRow>,
    pub slope_increment: Option<f64>,
    pub slope_sup_increment: Option<f64>,
    pub max_second_moment: f64,
    /// `max / min` of the paired ratio over horizons.
    pub paired_spread: Option<f64>,
    /// All increments vanish up to rounding (frozen dynamics); slopes are undefined.
    pub degenerate: bool,
}

/// Short-time moment estimates of the state under the constant strategy `h`,
/// started at `pi` (and at `xi` for the paired estimate) at time `t`.
#[allow(clippy::too_many_arguments)]
pub fn moment_suite<T: Real>(
    model: &Model<T>,
    h: &Strategy<T>,
    t: T,
    pi: &[T],
    xi: &[T],
    deltas: &[f64],
    sim: &SimSpec,
) -> Result<MomentReport> {
    if pi.len() != xi.len() || pi.len() + 1 != model.states() {
        return Err(Error::Domain("start states must have d - 1 coordinates".into()));
    }
    let gap = dist2_sq(pi, xi).as_f64();
    let mut rows = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        if !(delta > 0.0) || (t.as_f64() + delta) > model.horizon().as_f64() + 1e-12 {
            return Err(Error::Domain(format!("horizon {delta} does not fit in [t, T]")));
        }
        let steps = ((delta / sim.dt).ceil() as usize).max(MIN_STEPS);
        let dt = T::lit(delta / steps as f64);
        let samples: Vec<Result<[f64; 4]>> = (0..sim.paths)
            .into_par_iter()
            .map(|i| {
                let coeffs = SdeCoefficients::new(model);
                let mut rng = path_rng(sim.seed, i as u64);
                let noise = NoiseRecord::generate(model, t, dt, steps, &mut rng);
                let a = run_state(&coeffs, h, pi, &noise, None, Mode::Tapered)?;
                let b = run_state(&coeffs, h, xi, &noise, None, Mode::Tapered)?;
                let end = a.last();
                let sup = (0..=steps).fold(T::zero(), |acc, k| acc.max(dist2_sq(a.at(k), pi)));
                Ok([
                    end.iter().fold(T::zero(), |s, &x| s + x * x).as_f64(),
                    dist2_sq(end, pi).as_f64(),
                    sup.as_f64(),
                    dist2_sq(end, b.last()).as_f64(),
                ])
            })
            .collect();
        let samples = samples.into_iter().collect::<Result<Vec<_>>>()?;
        let col = |j: usize| Estimate::from_samples(&samples.iter().map(|s| s[j]).collect::<Vec<_>>());
        let paired = col(3);
        rows.push(MomentRow {
            delta,
            second_moment: col(0),
            increment: col(1),
            sup_increment: col(2),
            paired,
            paired_ratio: (gap > 0.0).then(|| paired.mean / gap),
        });
    }
    let ds: Vec<f64> = rows.iter().map(|r| r.delta).collect();
    let inc: Vec<f64> = rows.iter().map(|r| r.increment.mean).collect();
    let sup: Vec<f64> = rows.iter().map(|r| r.sup_increment.mean).collect();
    let ratios: Option<Vec<f64>> = rows.iter().map(|r| r.paired_ratio).collect();
    let paired_spread = ratios.and_then(|r| {
        let max = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = r.iter().cloned().fold(f64::INFINITY, f64::min);
        (min > 0.0).then(|| max / min)
    });
    Ok(MomentReport {
        slope_increment: log_log_slope(&ds, &inc),
        slope_sup_increment: log_log_slope(&ds, &sup),
        max_second_moment: rows.iter().map(|r| r.second_moment.mean).fold(0.0, f64::max),
        paired_spread,
        degenerate: inc.iter().chain(&sup).all(|&v| v < DEGENERATE),
        rows,
    })
}
