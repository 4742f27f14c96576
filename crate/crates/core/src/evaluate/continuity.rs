use serde::{Deserialize, Serialize};

use crate::hjb::ValueGrid;
use crate::scalar::Real;

/// Time levels kept for the pairwise comparison.
const MAX_LEVELS: usize = 65;

/// Fit of `|V(t, pi) - V(s, pi)| <= C |t - s|^{1/2}` over grid pairs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContinuityReport {
    /// Envelope constant: largest ratio over the calibration pairs (every
    /// other simplex node, time lags of at least `T/8`).
    pub c_fit: f64,
    /// Least-squares slope through the origin over all pairs.
    pub c_regression: f64,
    /// Largest ratio over all pairs, including consecutive solver levels.
    pub max_ratio: f64,
    /// `max_ratio / c_fit`.
    pub excess: f64,
    pub pairs: usize,
    /// Largest difference quotient between neighbouring nodes at any kept level.
    pub lipschitz_pi: f64,
}

impl ContinuityReport {
    /// No pair exceeds the fitted constant by more than `tolerance` (relative).
    pub fn bounded(&self, tolerance: f64) -> bool {
        self.c_fit.is_finite() && self.max_ratio <= self.c_fit * (1.0 + tolerance)
    }
}

/// Time-continuity study of a solved grid over its simplex nodes.
pub fn continuity_study<T: Real>(vg: &ValueGrid<T>) -> ContinuityReport {
    let levels = vg.levels();
    let stride = levels.div_ceil(MAX_LEVELS - 1).max(1);
    let mut kept: Vec<usize> = (0..levels).step_by(stride).collect();
    if *kept.last().expect("at least one level") != levels - 1 {
        kept.push(levels - 1);
    }
    let t: Vec<f64> = vg.t_nodes.iter().map(|x| x.as_f64()).collect();
    let horizon = t[levels - 1] - t[0];
    let nodes: Vec<usize> = (0..vg.grid.len()).filter(|&n| vg.grid.in_simplex(n)).collect();
    let value = |l: usize, n: usize| vg.level(l)[n].as_f64();

    let mut c_fit = 0.0f64;
    let mut max_ratio = 0.0f64;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    let mut pairs = 0usize;
    let mut visit = |a: usize, b: usize, n: usize, calibrate: bool| {
        let lag = (t[b] - t[a]).abs();
        if lag == 0.0 {
            return;
        }
        let x = lag.sqrt();
        let y = (value(a, n) - value(b, n)).abs();
        let r = y / x;
        max_ratio = max_ratio.max(r);
        sxy += x * y;
        sxx += x * x;
        pairs += 1;
        if calibrate && lag >= horizon / 8.0 - 1e-12 {
            c_fit = c_fit.max(r);
        }
    };
    for (pos, &n) in nodes.iter().enumerate() {
        let calibrate = pos % 2 == 0;
        for (i, &a) in kept.iter().enumerate() {
            for &b in &kept[i + 1..] {
                visit(a, b, n, calibrate);
            }
        }
        for l in 0..levels - 1 {
            visit(l, l + 1, n, false);
        }
    }

    let h = vg.grid.spacing().as_f64();
    let mut lipschitz_pi = 0.0f64;
    for &l in &kept {
        let v = vg.level(l);
        for &n in &nodes {
            for axis in 0..vg.grid.dim() {
                if let (_, Some(f)) = vg.grid.axis_neighbors(n, axis) {
                    if vg.grid.in_simplex(f) {
                        lipschitz_pi = lipschitz_pi.max((v[f] - v[n]).abs().as_f64() / h);
                    }
                }
            }
        }
    }
    ContinuityReport {
        c_fit,
        c_regression: if sxx > 0.0 { sxy / sxx } else { 0.0 },
        max_ratio,
        excess: if c_fit > 0.0 { max_ratio / c_fit } else { f64::NAN },
        pairs,
        lipschitz_pi,
    }
}
