use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::Policy;
use crate::error::{Error, Result};
use crate::model::{dist_to_restricted, Model, SIMPLEX_TOL};
use crate::rng::path_rng;
use crate::scalar::Real;
use crate::simulation::{run_state, Mode, NoiseRecord, SdeCoefficients};

use super::Estimate;

/// Smallest number of paths accepted by [`mc_reward`].
pub const MIN_PATHS: usize = 100;

/// Monte Carlo settings. Path `i` always uses the stream `(seed, i)`, so runs
/// with the same seed share their noise across policies and `m`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub dt: f64,
    pub paths: usize,
    pub seed: u64,
}

/// Number of steps covering `[t0, t1]` with steps at most `dt`, and the step used.
pub fn time_steps<T: Real>(t0: T, t1: T, dt: f64) -> (usize, T) {
    let span = (t1 - t0).as_f64();
    if span <= 0.0 {
        return (0, T::zero());
    }
    let steps = ((span / dt) - 1e-9).ceil().max(1.0) as usize;
    (steps, (t1 - t0) / T::count(steps))
}

/// Per-path samples of `exp(-int_{t0}^{t1} b~ ds) * terminal(pi_{t1})` with
/// the state driven by `policy` from `pi` (regularized when `m` is given).
pub fn discounted_samples<T, F>(
    model: &Model<T>,
    policy: &dyn Policy<T>,
    t0: T,
    t1: T,
    pi: &[T],
    sim: &SimSpec,
    m: Option<T>,
    terminal: F,
) -> Result<Vec<f64>>
where
    T: Real,
    F: Fn(&[T]) -> T + Sync,
{
    if pi.len() + 1 != model.states() {
        return Err(Error::Domain(format!(
            "start state has {} coordinates, expected {}",
            pi.len(),
            model.states() - 1
        )));
    }
    if dist_to_restricted(pi) > T::lit(SIMPLEX_TOL) {
        return Err(Error::Domain(format!(
            "start state {:?} is outside the simplex",
            crate::scalar::to_f64_vec(pi)
        )));
    }
    let (steps, dt) = time_steps(t0, t1, sim.dt);
    if steps == 0 {
        let v = terminal(pi).as_f64();
        return Ok(vec![v; sim.paths]);
    }
    (0..sim.paths)
        .into_par_iter()
        .map(|i| {
            let coeffs = SdeCoefficients::new(model);
            let mut rng = path_rng(sim.seed, i as u64);
            let noise = NoiseRecord::generate(model, t0, dt, steps, &mut rng);
            let run = run_state(&coeffs, policy, pi, &noise, m, Mode::Tapered)?;
            Ok(((-run.cost).exp() * terminal(run.last())).as_f64())
        })
        .collect()
}

/// Per-path reward samples `exp(-int_t^T b~ ds)`.
pub fn reward_samples<T: Real>(
    model: &Model<T>,
    policy: &dyn Policy<T>,
    t: T,
    pi: &[T],
    sim: &SimSpec,
    m: Option<T>,
) -> Result<Vec<f64>> {
    discounted_samples(model, policy, t, model.horizon(), pi, sim, m, |_| T::one())
}

/// Reward `E exp(-int_t^T b~(R pi_s, h_s) ds)` with its standard error.
pub fn mc_reward<T: Real>(
    model: &Model<T>,
    policy: &dyn Policy<T>,
    t: T,
    pi: &[T],
    sim: &SimSpec,
    m: Option<T>,
) -> Result<Estimate> {
    if sim.paths < MIN_PATHS {
        return Err(Error::Config(format!("need at least {MIN_PATHS} paths, got {}", sim.paths)));
    }
    Ok(Estimate::from_samples(&reward_samples(model, policy, t, pi, sim, m)?))
}
