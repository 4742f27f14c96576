use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{b_clipped, Policy};
use crate::error::Result;
use crate::model::{lift_unchecked, Model};
use crate::rng::{exponential, normal, path_rng, uniform_open, PathRng};
use crate::scalar::{dist2_sq, Real};

use super::{PathBundle, RegularizedPath, SdeCoefficients};

/// Whether coefficients are tapered outside the simplex.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Tapered coefficients, defined on all of space.
    Tapered,
    /// Raw coefficients; leaving the extended simplex is an error.
    Untapered,
}

/// Driving noise of the state SDE on a time grid: Brownian increments for the
/// market noise, independent increments for the regularization, and Poisson
/// event times with uniform marks. Each grid step is split into segments at
/// event times.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseRecord<T> {
    pub t0: T,
    pub dt: T,
    pub steps: usize,
    pub assets: usize,
    pub extra_dim: usize,
    pub kappa: usize,
    /// First segment of each step; length `steps + 1`.
    pub step_segments: Vec<usize>,
    /// First event of each step; length `steps + 1`.
    pub step_events: Vec<usize>,
    pub seg_dt: Vec<T>,
    /// Whether the segment ends with an event.
    pub seg_jump: Vec<bool>,
    /// `assets` increments per segment.
    pub db: Vec<T>,
    /// `extra_dim` increments per segment.
    pub db_extra: Vec<T>,
    pub event_times: Vec<T>,
    /// `kappa` uniform marks per event.
    pub marks: Vec<T>,
}

/// Noise of one grid step.
#[derive(Clone, Copy, Debug)]
pub struct StepNoise<'a, T> {
    pub seg_dt: &'a [T],
    pub seg_jump: &'a [bool],
    pub db: &'a [T],
    pub db_extra: &'a [T],
    pub marks: &'a [T],
}

impl<T: Real> NoiseRecord<T> {
    /// Draws the noise for `steps` steps of size `dt` starting at `t0`.
    /// Event times and marks are drawn first, then increments step by step.
    pub fn generate(model: &Model<T>, t0: T, dt: T, steps: usize, rng: &mut PathRng) -> Self {
        let n = model.assets();
        let extra = model.states() - 1;
        let kappa = model.kappa();
        let lambda = model.lambda().as_f64();
        let t_end = (t0 + dt * T::count(steps)).as_f64();
        let mut event_times = Vec::new();
        let mut marks = Vec::new();
        if lambda > 0.0 {
            let mut t = t0.as_f64();
            loop {
                t += exponential(rng, lambda);
                if t > t_end {
                    break;
                }
                event_times.push(T::lit(t));
                for _ in 0..kappa {
                    marks.push(uniform_open::<T, _>(rng));
                }
            }
        }
        let mut rec = Self {
            t0,
            dt,
            steps,
            assets: n,
            extra_dim: extra,
            kappa,
            step_segments: Vec::with_capacity(steps + 1),
            step_events: Vec::with_capacity(steps + 1),
            seg_dt: Vec::with_capacity(steps + event_times.len()),
            seg_jump: Vec::with_capacity(steps + event_times.len()),
            db: Vec::with_capacity((steps + event_times.len()) * n),
            db_extra: Vec::with_capacity((steps + event_times.len()) * extra),
            event_times,
            marks,
        };
        let mut ev = 0;
        for i in 0..steps {
            rec.step_segments.push(rec.seg_dt.len());
            rec.step_events.push(ev);
            let a = t0 + dt * T::count(i);
            let b = if i + 1 == steps { t0 + dt * T::count(steps) } else { t0 + dt * T::count(i + 1) };
            let mut left = a;
            while ev < rec.event_times.len() && rec.event_times[ev] <= b {
                let s = rec.event_times[ev].max(left);
                rec.push_segment(s - left, true, rng);
                left = s;
                ev += 1;
            }
            rec.push_segment((b - left).max(T::zero()), false, rng);
        }
        rec.step_segments.push(rec.seg_dt.len());
        rec.step_events.push(ev);
        rec
    }

    fn push_segment(&mut self, len: T, jump: bool, rng: &mut PathRng) {
        let s = len.sqrt();
        self.seg_dt.push(len);
        self.seg_jump.push(jump);
        for _ in 0..self.assets {
            self.db.push(normal::<T, _>(rng) * s);
        }
        for _ in 0..self.extra_dim {
            self.db_extra.push(normal::<T, _>(rng) * s);
        }
    }

    pub fn step(&self, i: usize) -> StepNoise<'_, T> {
        let (s0, s1) = (self.step_segments[i], self.step_segments[i + 1]);
        let (e0, e1) = (self.step_events[i], self.step_events[i + 1]);
        StepNoise {
            seg_dt: &self.seg_dt[s0..s1],
            seg_jump: &self.seg_jump[s0..s1],
            db: &self.db[s0 * self.assets..s1 * self.assets],
            db_extra: &self.db_extra[s0 * self.extra_dim..s1 * self.extra_dim],
            marks: &self.marks[e0 * self.kappa..e1 * self.kappa],
        }
    }

    /// The same record with the regularization increments negated; the
    /// antithetic partner for variance reduction in `m`-comparisons.
    pub fn mirrored(&self) -> Self {
        let mut out = self.clone();
        out.db_extra.iter_mut().for_each(|x| *x = -*x);
        out
    }

    pub fn time(&self, i: usize) -> T {
        self.t0 + self.dt * T::count(i)
    }
}

/// One Euler–Maruyama step of the restricted state over a grid step, with
/// jumps applied exactly at event times.
///
/// Each segment between events adds `alpha~ ds + beta~^T dB [+ m^{-1/2} dB~]`;
/// each event adds `gamma~(pi, u)`. The jump compensator `int gamma~ du`
/// vanishes identically (the lifted state sums to one and the densities are
/// normalized), so it is not integrated here; see
/// [`SdeCoefficients::compensator_raw`] for the quadrature check.
pub fn sde_step<T: Real>(
    coeffs: &SdeCoefficients<'_, T>,
    pi: &[T],
    h: &[T],
    noise: StepNoise<'_, T>,
    m: Option<T>,
    mode: Mode,
) -> Result<Vec<T>> {
    let dim = pi.len();
    let n = h.len();
    let kappa = coeffs.model.kappa();
    let reg = m.map(|m| T::one() / m.sqrt());
    let mut x = pi.to_vec();
    let mut ev = 0;
    for s in 0..noise.seg_dt.len() {
        let ds = noise.seg_dt[s];
        let db = &noise.db[s * n..(s + 1) * n];
        if dim == 0 {
            continue;
        }
        let scale = match mode {
            Mode::Tapered => coeffs.taper(&x),
            Mode::Untapered => {
                coeffs.check_extended(&x)?;
                T::one()
            }
        };
        let mut next = x.clone();
        if scale > T::zero() {
            let drift = coeffs.drift(&x, h);
            for k in 0..dim {
                next[k] += drift[k] * scale * ds;
            }
            coeffs.diffusion_increment(&x, db, scale, &mut next);
        }
        if let Some(r) = reg {
            let dbe = &noise.db_extra[s * dim..(s + 1) * dim];
            for k in 0..dim {
                next[k] += r * dbe[k];
            }
        }
        x = next;
        if noise.seg_jump[s] {
            let u = &noise.marks[ev * kappa..(ev + 1) * kappa];
            ev += 1;
            let scale = match mode {
                Mode::Tapered => coeffs.taper(&x),
                Mode::Untapered => {
                    coeffs.check_extended(&x)?;
                    T::one()
                }
            };
            if scale > T::zero() {
                let j = coeffs.jump(&x, u)?;
                for k in 0..dim {
                    x[k] += scale * j[k];
                }
            }
        }
    }
    Ok(x)
}

/// A state trajectory on the grid together with the integrated cost.
#[derive(Clone, Debug)]
pub struct StateRun<T> {
    /// `(steps + 1) * dim` states, flat.
    pub path: Vec<T>,
    pub dim: usize,
    /// Left-point sum of the clipped cost along the path.
    pub cost: T,
}

impl<T: Real> StateRun<T> {
    pub fn at(&self, i: usize) -> &[T] {
        &self.path[i * self.dim..(i + 1) * self.dim]
    }

    pub fn last(&self) -> &[T] {
        let n = self.path.len() / self.dim.max(1);
        if self.dim == 0 {
            return &[];
        }
        self.at(n - 1)
    }

    pub fn to_rows(&self) -> Vec<Vec<T>> {
        if self.dim == 0 {
            return Vec::new();
        }
        self.path.chunks(self.dim).map(|c| c.to_vec()).collect()
    }
}

/// Drives the state from `pi0` through every step of `noise` under `policy`.
/// The policy is evaluated at the start of each step on the current state.
pub fn run_state<T: Real>(
    coeffs: &SdeCoefficients<'_, T>,
    policy: &dyn Policy<T>,
    pi0: &[T],
    noise: &NoiseRecord<T>,
    m: Option<T>,
    mode: Mode,
) -> Result<StateRun<T>> {
    let dim = pi0.len();
    let mut path = Vec::with_capacity((noise.steps + 1) * dim);
    path.extend_from_slice(pi0);
    let mut x = pi0.to_vec();
    let mut h = Vec::with_capacity(coeffs.model.assets());
    let mut cost = T::zero();
    for i in 0..noise.steps {
        let t = noise.time(i);
        policy.action(t, &x, &mut h);
        cost += b_clipped(coeffs.model, &lift_unchecked(&x), &h) * noise.dt;
        x = sde_step(coeffs, &x, &h, noise.step(i), m, mode)?;
        path.extend_from_slice(&x);
    }
    Ok(StateRun { path, dim, cost })
}

/// Sup over grid times of the squared distance between two runs.
pub fn sup_sq_distance<T: Real>(a: &StateRun<T>, b: &StateRun<T>) -> T {
    if a.dim == 0 {
        return T::zero();
    }
    a.path
        .chunks(a.dim)
        .zip(b.path.chunks(b.dim))
        .fold(T::zero(), |acc, (x, y)| acc.max(dist2_sq(x, y)))
}

/// Per-path output of [`simulate_coupled`].
#[derive(Clone, Debug)]
pub struct CoupledSample<T> {
    /// `sup_t |pi^m_t - pi_t|^2` for each entry of the `m` list.
    pub sup_sq: Vec<T>,
    /// Full paths, kept for the first few samples only.
    pub bundle: Option<PathBundle<T>>,
}

/// Options for coupled simulation.
#[derive(Clone, Copy, Debug)]
pub struct CoupledSpec<T> {
    pub t0: T,
    pub dt: T,
    pub steps: usize,
    pub paths: usize,
    pub seed: u64,
    /// Number of leading paths whose bundles are kept.
    pub keep_paths: usize,
}

/// Simulates the state and each regularized state with shared market noise
/// and events, and independent extra noise scaled by `m^{-1/2}`.
pub fn simulate_coupled<T: Real>(
    model: &Model<T>,
    policy: &dyn Policy<T>,
    pi0: &[T],
    m_list: &[T],
    spec: CoupledSpec<T>,
) -> Result<Vec<CoupledSample<T>>> {
    if m_list.is_empty() {
        return Err(crate::error::Error::Config("m list must be non-empty".into()));
    }
    (0..spec.paths)
        .into_par_iter()
        .map(|i| {
            let coeffs = SdeCoefficients::new(model);
            let mut rng = path_rng(spec.seed, i as u64);
            let noise = NoiseRecord::generate(model, spec.t0, spec.dt, spec.steps, &mut rng);
            let base = run_state(&coeffs, policy, pi0, &noise, None, Mode::Tapered)?;
            let mut sup_sq = Vec::with_capacity(m_list.len());
            let mut regs = Vec::new();
            for &m in m_list {
                let run = run_state(&coeffs, policy, pi0, &noise, Some(m), Mode::Tapered)?;
                sup_sq.push(sup_sq_distance(&base, &run));
                if i < spec.keep_paths {
                    regs.push(RegularizedPath { m, path: run.to_rows() });
                }
            }
            let bundle = (i < spec.keep_paths).then(|| PathBundle {
                time_grid: (0..=spec.steps).map(|k| noise.time(k)).collect(),
                state_path: base.to_rows(),
                state_path_regularized: regs,
                noise_record: Some(noise),
                ..PathBundle::default()
            });
            Ok(CoupledSample { sup_sq, bundle })
        })
        .collect()
}
