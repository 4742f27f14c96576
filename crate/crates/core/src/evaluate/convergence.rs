use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{Policy, Strategy};
use crate::error::{Error, Result};
use crate::hjb::{solve_hjb, HjbGrid};
use crate::model::Model;
use crate::rng::path_rng;
use crate::scalar::Real;
use crate::simulation::{run_state, simulate_coupled, CoupledSpec, Mode, NoiseRecord, SdeCoefficients};

use super::{log_log_slope, reward_samples, time_steps, Estimate, SimSpec};

fn check_m_list(m_list: &[f64]) -> Result<()> {
    if m_list.is_empty() || m_list.iter().any(|&m| !(m >= 1.0)) || m_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config(format!(
            "m list must be increasing with entries >= 1, got {m_list:?}"
        )));
    }
    Ok(())
}

/// Pathwise distance between regularized and plain states for one strategy.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct L2Strategy {
    pub h: Vec<f64>,
    /// `E sup_t |pi^m_t - pi_t|^2` per `m`.
    pub estimates: Vec<Estimate>,
    pub slope: Option<f64>,
    /// Estimate divided by `4 (d - 1) T / m`.
    pub envelope_ratio: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct L2Report {
    pub m_list: Vec<f64>,
    pub strategies: Vec<L2Strategy>,
    /// Largest estimate over strategies, per `m`.
    pub max_over_h: Vec<f64>,
    pub max_slope: Option<f64>,
    /// `4 (d - 1) (T - t)`, the `m`-free part of the envelope.
    pub envelope_scale: f64,
}

/// `E sup_t |pi^m_t - pi_t|^2` for each `m` and constant strategy, with the
/// market noise and signals shared between `pi` and all `pi^m`.
pub fn l2_convergence_study<T: Real>(
    model: &Model<T>,
    strategies: &[Strategy<T>],
    t: T,
    pi: &[T],
    m_list: &[f64],
    sim: &SimSpec,
) -> Result<L2Report> {
    check_m_list(m_list)?;
    let ms: Vec<T> = m_list.iter().map(|&m| T::lit(m)).collect();
    let (steps, dt) = time_steps(t, model.horizon(), sim.dt);
    let scale = 4.0 * (model.states() - 1) as f64 * (model.horizon() - t).as_f64();
    let mut out = Vec::with_capacity(strategies.len());
    for h in strategies {
        let spec = CoupledSpec {
            t0: t,
            dt,
            steps,
            paths: sim.paths,
            seed: sim.seed,
            keep_paths: 0,
        };
        let samples = simulate_coupled(model, h, pi, &ms, spec)?;
        let estimates: Vec<Estimate> = (0..ms.len())
            .map(|j| Estimate::from_samples(&samples.iter().map(|s| s.sup_sq[j].as_f64()).collect::<Vec<_>>()))
            .collect();
        let means: Vec<f64> = estimates.iter().map(|e| e.mean).collect();
        out.push(L2Strategy {
            h: crate::scalar::to_f64_vec(&h.h),
            slope: log_log_slope(m_list, &means),
            envelope_ratio: means.iter().zip(m_list).map(|(e, m)| e * m / scale).collect(),
            estimates,
        });
    }
    let max_over_h: Vec<f64> = (0..ms.len())
        .map(|j| out.iter().map(|s| s.estimates[j].mean).fold(0.0, f64::max))
        .collect();
    Ok(L2Report {
        m_list: m_list.to_vec(),
        max_slope: log_log_slope(m_list, &max_over_h),
        max_over_h,
        strategies: out,
        envelope_scale: scale,
    })
}

/// Rewards of regularized against plain dynamics for constant strategies.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RewardConvergenceReport {
    pub m_list: Vec<f64>,
    pub strategies: Vec<Vec<f64>>,
    /// Plain reward `v(t, pi, h)` per strategy.
    pub base: Vec<Estimate>,
    /// `v^m - v` per strategy and `m`, from paired samples.
    pub diffs: Vec<Vec<Estimate>>,
    /// `max_h |v^m - v|` per `m`.
    pub max_abs: Vec<f64>,
    /// Strategy attaining the maximum, per `m`.
    pub argmax: Vec<usize>,
    /// Paired estimate of `max_abs[i] - max_abs[i + 1]`.
    pub decrease: Vec<Estimate>,
    /// Paired estimate of `max_abs[first] - max_abs[last]`.
    pub overall: Estimate,
    /// No consecutive increase beyond two standard errors.
    pub nonincreasing: bool,
    /// The overall decrease exceeds two standard errors.
    pub overall_decrease: bool,
    /// Every consecutive decrease exceeds two standard errors.
    pub strict_steps: bool,
}

/// Paired comparison of `v^m(t, pi, h)` with `v(t, pi, h)` over strategies and `m`.
///
/// The plain and regularized runs share market noise and signals, and each
/// regularized reward is averaged over the extra noise and its negation.
/// Both are unbiased; the antithetic pair removes the part of `v^m - v` that
/// is linear in the extra noise, which otherwise swamps the `O(1/m)` mean.
pub fn reward_convergence_study<T: Real>(
    model: &Model<T>,
    strategies: &[Strategy<T>],
    t: T,
    pi: &[T],
    m_list: &[f64],
    sim: &SimSpec,
) -> Result<RewardConvergenceReport> {
    check_m_list(m_list)?;
    let (steps, dt) = time_steps(t, model.horizon(), sim.dt);
    let nm = m_list.len();
    let ns = strategies.len();
    // Per path: for each strategy, the plain reward followed by one per m.
    let per_path: Vec<Result<Vec<f64>>> = (0..sim.paths)
        .into_par_iter()
        .map(|i| {
            let coeffs = SdeCoefficients::new(model);
            let mut rng = path_rng(sim.seed, i as u64);
            let noise = NoiseRecord::generate(model, t, dt, steps, &mut rng);
            let mirror = noise.mirrored();
            let mut row = Vec::with_capacity(ns * (nm + 1));
            for h in strategies {
                let policy: &dyn Policy<T> = h;
                let base = run_state(&coeffs, policy, pi, &noise, None, Mode::Tapered)?;
                row.push((-base.cost).exp().as_f64());
                for &m in m_list {
                    let m = Some(T::lit(m));
                    let a = run_state(&coeffs, policy, pi, &noise, m, Mode::Tapered)?;
                    let b = run_state(&coeffs, policy, pi, &mirror, m, Mode::Tapered)?;
                    row.push(((-a.cost).exp() + (-b.cost).exp()).as_f64() * 0.5);
                }
            }
            Ok(row)
        })
        .collect();
    let per_path = per_path.into_iter().collect::<Result<Vec<_>>>()?;
    let col = |s: usize, j: usize| -> Vec<f64> { per_path.iter().map(|r| r[s * (nm + 1) + j]).collect() };
    let base: Vec<Estimate> = (0..ns).map(|s| Estimate::from_samples(&col(s, 0))).collect();
    let diff_samples: Vec<Vec<Vec<f64>>> = (0..ns)
        .map(|s| {
            let b = col(s, 0);
            (1..=nm)
                .map(|j| col(s, j).iter().zip(&b).map(|(x, y)| x - y).collect())
                .collect()
        })
        .collect();
    let diffs: Vec<Vec<Estimate>> = diff_samples
        .iter()
        .map(|per_m| per_m.iter().map(|d| Estimate::from_samples(d)).collect())
        .collect();
    let mut max_abs = Vec::with_capacity(nm);
    let mut argmax = Vec::with_capacity(nm);
    for j in 0..nm {
        let (best, val) = (0..ns)
            .map(|s| (s, diffs[s][j].mean.abs()))
            .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
        max_abs.push(val);
        argmax.push(best);
    }
    // Paired estimate of `max_abs[i] - max_abs[j]`, signs fixed by the means.
    let change = |i: usize, j: usize| -> Estimate {
        let (a, b) = (argmax[i], argmax[j]);
        let sa = diffs[a][i].mean.signum();
        let sb = diffs[b][j].mean.signum();
        let d: Vec<f64> = diff_samples[a][i]
            .iter()
            .zip(&diff_samples[b][j])
            .map(|(x, y)| sa * x - sb * y)
            .collect();
        Estimate::from_samples(&d)
    };
    let decrease: Vec<Estimate> = (0..nm.saturating_sub(1)).map(|j| change(j, j + 1)).collect();
    let overall = change(0, nm - 1);
    Ok(RewardConvergenceReport {
        m_list: m_list.to_vec(),
        strategies: strategies.iter().map(|h| crate::scalar::to_f64_vec(&h.h)).collect(),
        base,
        nonincreasing: decrease.iter().all(|e| e.mean >= -2.0 * e.stderr),
        overall_decrease: nm > 1 && overall.mean > 2.0 * overall.stderr,
        strict_steps: decrease.iter().all(|e| e.mean > 2.0 * e.stderr),
        diffs,
        max_abs,
        argmax,
        decrease,
        overall,
    })
}

/// One regularization level of the epsilon-optimality study.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpsOptLevel {
    pub m: f64,
    /// `V^m(t, pi)` from the regularized grid.
    pub value: f64,
    /// `v(t, pi, h^m)`: reward of the regularized policy in the plain dynamics.
    pub reward: Estimate,
    /// `V_ref - reward`.
    pub gap: f64,
    /// `|V^m - V|` over simplex nodes and sampled times.
    pub grid_distance: f64,
    /// Paired `reward(this m) - reward(previous m)`.
    pub change: Option<Estimate>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpsOptReport {
    pub t: f64,
    pub pi: Vec<f64>,
    /// Unregularized grid value `V(t, pi)`.
    pub value_ref: f64,
    /// Reward of the unregularized grid policy, cross-checking `value_ref`.
    pub reward_ref: Estimate,
    pub levels: Vec<EpsOptLevel>,
    /// Paired `reward(last m) - reward(first m)`.
    pub overall_change: Estimate,
    /// Each gap is at most the previous one plus two standard errors.
    pub gaps_nonincreasing: bool,
    /// The last gap is below the first by more than two standard errors.
    pub gaps_decrease: bool,
    /// `grid_distance` strictly decreases in `m`.
    pub grid_decreasing: bool,
}

/// Solves the regularized equations, evaluates each regularized policy in
/// the plain dynamics and compares with the unregularized solution.
pub fn epsilon_optimality_study<T: Real>(
    model: &Model<T>,
    spec: &HjbGrid,
    m_list: &[f64],
    t: T,
    pi: &[T],
    sim: &SimSpec,
) -> Result<EpsOptReport> {
    check_m_list(m_list)?;
    let reference = solve_hjb(model, spec, None)?;
    let value_ref = reference.value_at(t, pi).as_f64();
    let ref_samples = reward_samples(model, &reference.policy, t, pi, sim, None)?;
    let horizon = model.horizon();
    let times: Vec<T> = (0..4).map(|k| t + (horizon - t) * T::lit(k as f64 / 4.0)).collect();
    let mut levels = Vec::with_capacity(m_list.len());
    let mut all_samples: Vec<Vec<f64>> = Vec::with_capacity(m_list.len());
    for &m in m_list {
        let vg = solve_hjb(model, spec, Some(T::lit(m)))?;
        let samples = reward_samples(model, &vg.policy, t, pi, sim, None)?;
        let reward = Estimate::from_samples(&samples);
        let change = all_samples.last().map(|prev: &Vec<f64>| Estimate::paired(&samples, prev));
        levels.push(EpsOptLevel {
            m,
            value: vg.value_at(t, pi).as_f64(),
            reward,
            gap: value_ref - reward.mean,
            grid_distance: vg.sup_distance(&reference, &times).as_f64(),
            change,
        });
        all_samples.push(samples);
    }
    let overall_change = Estimate::paired(all_samples.last().expect("non-empty"), &all_samples[0]);
    Ok(EpsOptReport {
        t: t.as_f64(),
        pi: crate::scalar::to_f64_vec(pi),
        value_ref,
        reward_ref: Estimate::from_samples(&ref_samples),
        gaps_nonincreasing: levels
            .iter()
            .filter_map(|l| l.change)
            .all(|c| c.mean >= -2.0 * c.stderr),
        gaps_decrease: overall_change.mean > 2.0 * overall_change.stderr,
        grid_decreasing: levels.windows(2).all(|w| w[1].grid_distance < w[0].grid_distance),
        overall_change,
        levels,
    })
}
