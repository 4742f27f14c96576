use rand::Rng;
use rayon::prelude::*;

use crate::density::Rosenblatt;
use crate::error::{Error, Result};
use crate::model::{Model, SimplexPoint};
use crate::rng::{exponential, normal, path_rng, uniform_open, PathRng};
use crate::scalar::{sum, Real};

use super::{PathBundle, SdeCoefficients, SignalEvent};

/// Outcome of one filter update.
#[derive(Clone, Debug)]
pub struct FilterStep<T> {
    pub point: SimplexPoint<T>,
    /// `|sum p - 1|` after the diffusion step, before any repair.
    pub sum_defect: T,
    /// Whether negative components had to be clipped.
    pub repaired: bool,
}

/// Number of grid steps for step size `dt` on `[0, horizon]`.
pub fn grid_steps<T: Real>(horizon: T, dt: T) -> Result<usize> {
    if !(dt > T::zero()) {
        return Err(Error::Config(format!("dt must be positive, got {dt}")));
    }
    let ratio = (horizon / dt).as_f64();
    let steps = ratio.round();
    if steps < 1.0 || (ratio - steps).abs() > 1e-6 * ratio.max(1.0) {
        return Err(Error::Config(format!(
            "dt = {dt} does not divide the horizon {horizon}"
        )));
    }
    Ok(steps as usize)
}

/// Euler step of the filter driven by the observed return increment `dr`,
/// followed by the exact Bayes update when a signal `z` arrives.
pub fn filter_step<T: Real>(
    model: &Model<T>,
    p: &SimplexPoint<T>,
    dr: &[T],
    dt: T,
    signal: Option<&[T]>,
) -> FilterStep<T> {
    let coeffs = SdeCoefficients::new(model);
    let mut step = filter_diffusion(&coeffs, p.as_slice(), dr, dt);
    if let Some(z) = signal {
        step.point = bayes_update(model, &step.point, z);
    }
    step
}

pub(crate) fn filter_diffusion<T: Real>(coeffs: &SdeCoefficients<'_, T>, p: &[T], dr: &[T], dt: T) -> FilterStep<T> {
    let model = coeffs.model;
    let n = model.assets();
    // Innovations increment sigma^{-1}(dR - M p dt).
    let drift = &model.params.drift;
    let mut resid = vec![T::zero(); n];
    for a in 0..n {
        let mp = p.iter().enumerate().fold(T::zero(), |acc, (k, &pk)| acc + drift[(a, k)] * pk);
        resid[a] = dr[a] - mp * dt;
    }
    let innov: Vec<T> = (0..n)
        .map(|a| (0..n).fold(T::zero(), |acc, b| acc + model.sigma_inv[(a, b)] * resid[b]))
        .collect();
    let beta = coeffs.beta_full(p);
    let qp = coeffs.generator_drift(p);
    let mut next: Vec<T> = (0..p.len())
        .map(|k| {
            let diff = (0..n).fold(T::zero(), |acc, a| acc + beta[(a, k)] * innov[a]);
            p[k] + qp[k] * dt + diff
        })
        .collect();
    let sum_defect = (sum(&next) - T::one()).abs();
    let repaired = next.iter().any(|&x| x < T::zero());
    if repaired || sum_defect > T::lit(crate::model::SIMPLEX_TOL) {
        for x in next.iter_mut() {
            *x = x.max(T::zero());
        }
        let s = sum(&next);
        for x in next.iter_mut() {
            *x /= s;
        }
    }
    let point = SimplexPoint::new(next).unwrap_or_else(|_| crate::model::project_to_simplex(p));
    FilterStep {
        point,
        sum_defect,
        repaired,
    }
}

/// Exact posterior `p_k f_k(z) / fbar(z, p)`.
pub fn bayes_update<T: Real>(model: &Model<T>, p: &SimplexPoint<T>, z: &[T]) -> SimplexPoint<T> {
    let fam = model.densities();
    let pv = p.as_slice();
    let fb = fam.mix(z, pv);
    let post: Vec<T> = pv.iter().enumerate().map(|(k, &pk)| pk * fam.value(k, z) / fb).collect();
    SimplexPoint::new(post).unwrap_or_else(|_| crate::model::project_to_simplex(pv))
}

fn draw_categorical<T: Real>(rng: &mut PathRng, weights: &[T]) -> usize {
    let total = sum(weights).as_f64();
    let mut u: f64 = rng.random::<f64>() * total;
    for (k, &w) in weights.iter().enumerate() {
        u -= w.as_f64();
        if u < 0.0 {
            return k;
        }
    }
    weights.iter().rposition(|&w| w > T::zero()).unwrap_or(0)
}

/// Simulates one market path (index 0 of the seed's streams).
pub fn simulate_market<T: Real>(model: &Model<T>, dt: T, seed: u64) -> Result<PathBundle<T>> {
    simulate_market_path(model, dt, seed, 0)
}

/// Simulates `paths` independent market paths in parallel.
pub fn simulate_market_paths<T: Real>(model: &Model<T>, dt: T, seed: u64, paths: usize) -> Result<Vec<PathBundle<T>>> {
    (0..paths)
        .into_par_iter()
        .map(|i| simulate_market_path(model, dt, seed, i as u64))
        .collect()
}

/// Hidden chain by exact holding times, returns on the grid, Poisson signal
/// times with marks from the current state's density, and the filter.
pub fn simulate_market_path<T: Real>(model: &Model<T>, dt: T, seed: u64, path_index: u64) -> Result<PathBundle<T>> {
    let horizon = model.horizon();
    let steps = grid_steps(horizon, dt)?;
    let dt = horizon / T::count(steps);
    let d = model.states();
    let n = model.assets();
    let kappa = model.kappa();
    let q = &model.params.generator;
    let mut rng = path_rng(seed, path_index);

    // Chain: jump times and states.
    let mut state = draw_categorical(&mut rng, model.prior.as_slice());
    let start_state = state;
    let mut switches: Vec<(f64, usize)> = Vec::new();
    let mut t = 0.0;
    let h = horizon.as_f64();
    loop {
        let rate = -q[(state, state)].as_f64();
        if rate <= 0.0 {
            break;
        }
        t += exponential(&mut rng, rate);
        if t >= h {
            break;
        }
        let weights: Vec<T> = (0..d).map(|l| if l == state { T::zero() } else { q[(state, l)] }).collect();
        state = draw_categorical(&mut rng, &weights);
        switches.push((t, state));
    }
    let state_at = |time: f64| -> usize {
        let idx = switches.partition_point(|&(s, _)| s <= time);
        if idx == 0 {
            start_state
        } else {
            switches[idx - 1].1
        }
    };

    // Signals.
    let mut events = Vec::new();
    let lambda = model.lambda().as_f64();
    if lambda > 0.0 {
        let mut t = 0.0;
        loop {
            t += exponential(&mut rng, lambda);
            if t > h {
                break;
            }
            let k = state_at(t);
            let u: Vec<T> = (0..kappa).map(|_| uniform_open(&mut rng)).collect();
            let vertex = SimplexPoint::<T>::vertex(d, k);
            let z = Rosenblatt::new(model.densities(), vertex.as_slice(), &model.rule).inverse(&u)?;
            events.push(SignalEvent {
                time: T::lit(t),
                state: k,
                z,
                u,
            });
        }
    }

    // Returns and filter.
    let drift = &model.params.drift;
    let coeffs = SdeCoefficients::new(model);
    let sqdt = dt.sqrt();
    let mut time_grid = Vec::with_capacity(steps + 1);
    let mut chain_path = Vec::with_capacity(steps + 1);
    let mut return_path = Vec::with_capacity(steps);
    let mut filter_path = Vec::with_capacity(steps + 1);
    let mut p = model.prior.clone();
    filter_path.push(p.clone());
    let mut repairs = 0;
    let mut max_defect = T::zero();
    let mut defects_ok = 0;
    let mut next_event = 0;
    let mut sw = 0;
    let mut cur = start_state;
    time_grid.push(T::zero());
    chain_path.push(start_state);
    for i in 0..steps {
        let a = (T::count(i) * dt).as_f64();
        let b = (T::count(i + 1) * dt).as_f64();
        // Exact integral of the drift of the chain over [a, b].
        let mut mean = vec![T::zero(); n];
        let mut left = a;
        while sw < switches.len() && switches[sw].0 <= b {
            let (s, k) = switches[sw];
            for r in 0..n {
                mean[r] += drift[(r, cur)] * T::lit(s - left);
            }
            left = s;
            cur = k;
            sw += 1;
        }
        for r in 0..n {
            mean[r] += drift[(r, cur)] * T::lit(b - left);
        }
        let dw: Vec<T> = (0..n).map(|_| normal::<T, _>(&mut rng) * sqdt).collect();
        let dr: Vec<T> = (0..n)
            .map(|r| mean[r] + (0..n).fold(T::zero(), |acc, c| acc + model.params.sigma[(r, c)] * dw[c]))
            .collect();
        let step = filter_diffusion(&coeffs, p.as_slice(), &dr, dt);
        max_defect = max_defect.max(step.sum_defect);
        if step.sum_defect <= T::lit(1e-10) {
            defects_ok += 1;
        }
        if step.repaired {
            repairs += 1;
        }
        p = step.point;
        while next_event < events.len() && events[next_event].time.as_f64() <= b {
            p = bayes_update(model, &p, &events[next_event].z);
            next_event += 1;
        }
        time_grid.push(T::count(i + 1) * dt);
        chain_path.push(cur);
        return_path.push(dr);
        filter_path.push(p.clone());
    }
    Ok(PathBundle {
        time_grid,
        chain_path,
        return_path,
        signal_events: events,
        filter_path,
        filter_repairs: repairs,
        max_sum_defect: max_defect,
        steps_sum_preserved: defects_ok,
        ..PathBundle::default()
    })
}
