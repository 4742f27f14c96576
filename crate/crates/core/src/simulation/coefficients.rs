use nalgebra::DMatrix;

use crate::density::Rosenblatt;
use crate::error::{Error, Result};
use crate::model::{dist_to_restricted, lift_unchecked, Model};
use crate::scalar::Real;

/// Coefficients of the filter SDE (full `d`-dimensional form) and of the
/// restricted state SDE, with their tapered extensions.
///
/// Writing `A = sigma^{-1} M`, the diffusion column of state `k` is
/// `beta_k(p) = p_k (A e_k - A p)` and the drift under the measure indexed by
/// `h` is `alpha_k(p, h) = (Q^T p)_k + theta p_k (mu_k - M p) . h`.
pub struct SdeCoefficients<'m, T: Real> {
    pub model: &'m Model<T>,
    scaled_drift: DMatrix<T>,
}

impl<'m, T: Real> SdeCoefficients<'m, T> {
    pub fn new(model: &'m Model<T>) -> Self {
        Self {
            scaled_drift: &model.sigma_inv * &model.params.drift,
            model,
        }
    }

    fn states(&self) -> usize {
        self.model.states()
    }

    /// `M p`.
    fn mean_drift(&self, p: &[T]) -> Vec<T> {
        let m = &self.model.params.drift;
        (0..m.nrows())
            .map(|a| p.iter().enumerate().fold(T::zero(), |acc, (k, &pk)| acc + m[(a, k)] * pk))
            .collect()
    }

    /// `A p` with `A = sigma^{-1} M`.
    fn scaled_mean(&self, p: &[T]) -> Vec<T> {
        let a = &self.scaled_drift;
        (0..a.nrows())
            .map(|r| p.iter().enumerate().fold(T::zero(), |acc, (k, &pk)| acc + a[(r, k)] * pk))
            .collect()
    }

    /// `beta(p)` as an `n x d` matrix; columns sum to zero on the simplex.
    pub fn beta_full(&self, p: &[T]) -> DMatrix<T> {
        let ap = self.scaled_mean(p);
        DMatrix::from_fn(self.model.assets(), p.len(), |r, k| p[k] * (self.scaled_drift[(r, k)] - ap[r]))
    }

    /// `Q^T p`.
    pub fn generator_drift(&self, p: &[T]) -> Vec<T> {
        let q = &self.model.params.generator;
        (0..p.len())
            .map(|k| p.iter().enumerate().fold(T::zero(), |acc, (l, &pl)| acc + q[(l, k)] * pl))
            .collect()
    }

    /// `alpha(p, h)`, the filter drift under the measure indexed by `h`.
    pub fn alpha_full(&self, p: &[T], h: &[T]) -> Vec<T> {
        let mp = self.mean_drift(p);
        let m = &self.model.params.drift;
        let theta = self.model.theta();
        let mut out = self.generator_drift(p);
        for (k, o) in out.iter_mut().enumerate() {
            let excess = (0..h.len()).fold(T::zero(), |acc, a| acc + (m[(a, k)] - mp[a]) * h[a]);
            *o += theta * p[k] * excess;
        }
        out
    }

    /// Bayes jump `p_k (f_k(z) / fbar(z, p) - 1)` of the full filter.
    pub fn signal_jump(&self, p: &[T], z: &[T]) -> Vec<T> {
        let fam = self.model.densities();
        let fb = fam.mix(z, p);
        (0..p.len()).map(|k| p[k] * (fam.value(k, z) / fb - T::one())).collect()
    }

    /// Restricted drift: first `d - 1` entries of `alpha(R pi, h)`.
    pub fn drift(&self, pi: &[T], h: &[T]) -> Vec<T> {
        let mut a = self.alpha_full(&lift_unchecked(pi), h);
        a.truncate(pi.len());
        a
    }

    /// Restricted diffusion: first `d - 1` columns of `beta(R pi)`, `n x (d - 1)`.
    pub fn diffusion(&self, pi: &[T]) -> DMatrix<T> {
        let b = self.beta_full(&lift_unchecked(pi));
        b.columns(0, pi.len()).into_owned()
    }

    /// Restricted jump driven by the uniform mark `u`.
    pub fn jump(&self, pi: &[T], u: &[T]) -> Result<Vec<T>> {
        let p = lift_unchecked(pi);
        let z = Rosenblatt::new(self.model.densities(), &p, &self.model.rule).inverse(u)?;
        let mut j = self.signal_jump(&p, &z);
        j.truncate(pi.len());
        Ok(j)
    }

    /// Taper factor `(1 - dist / eps)^+`: one on the simplex, zero beyond `eps`.
    pub fn taper(&self, pi: &[T]) -> T {
        (T::one() - dist_to_restricted(pi) / self.model.eps).max(T::zero())
    }

    pub fn drift_tapered(&self, pi: &[T], h: &[T]) -> Vec<T> {
        let t = self.taper(pi);
        if t == T::zero() {
            return vec![T::zero(); pi.len()];
        }
        self.drift(pi, h).into_iter().map(|x| x * t).collect()
    }

    pub fn diffusion_tapered(&self, pi: &[T]) -> DMatrix<T> {
        let t = self.taper(pi);
        if t == T::zero() {
            return DMatrix::zeros(self.model.assets(), pi.len());
        }
        self.diffusion(pi) * t
    }

    pub fn jump_tapered(&self, pi: &[T], u: &[T]) -> Result<Vec<T>> {
        let t = self.taper(pi);
        if t == T::zero() {
            return Ok(vec![T::zero(); pi.len()]);
        }
        Ok(self.jump(pi, u)?.into_iter().map(|x| x * t).collect())
    }

    /// Tapered compensator `int gamma~(pi, u) du`.
    pub fn compensator(&self, pi: &[T]) -> Vec<T> {
        let t = self.taper(pi);
        if t == T::zero() {
            return vec![T::zero(); pi.len()];
        }
        self.compensator_raw(pi).into_iter().map(|x| x * t).collect()
    }

    /// Compensator `int gamma(pi, u) du`, evaluated in signal space as
    /// `int gamma(pi, z) fbar(z, R pi) dz` (zero up to quadrature error).
    pub fn compensator_raw(&self, pi: &[T]) -> Vec<T> {
        let dim = pi.len();
        if dim == 0 {
            return Vec::new();
        }
        let fam = self.model.densities();
        let rule = &self.model.signal_rule;
        let p = lift_unchecked(pi);
        let (lo, hi) = (fam.lower(), fam.upper());
        let vol = fam.volume();
        let mut z = vec![T::zero(); lo.len()];
        let mut acc = vec![T::zero(); dim];
        for q in 0..rule.len() {
            for (i, &x) in rule.point(q).iter().enumerate() {
                z[i] = lo[i] + (hi[i] - lo[i]) * x;
            }
            let fb = fam.mix(&z, &p);
            let w = rule.weights[q] * vol;
            for k in 0..dim {
                acc[k] += w * p[k] * (fam.value(k, &z) - fb);
            }
        }
        acc
    }

    /// Checks that an untapered evaluation at `pi` is admissible.
    pub fn check_extended(&self, pi: &[T]) -> Result<()> {
        let dist = dist_to_restricted(pi);
        if dist > self.model.eps {
            return Err(Error::Step(format!(
                "distance {dist} from the simplex exceeds the extension {}",
                self.model.eps
            )));
        }
        Ok(())
    }

    /// Transposed diffusion applied to a Brownian increment: `beta(pi)^T db`,
    /// restricted to the first `d - 1` states, scaled by `scale`.
    pub(crate) fn diffusion_increment(&self, pi: &[T], db: &[T], scale: T, out: &mut [T]) {
        let p = lift_unchecked(pi);
        let ap = self.scaled_mean(&p);
        for (k, o) in out.iter_mut().enumerate() {
            let mut s = T::zero();
            for r in 0..db.len() {
                s += (self.scaled_drift[(r, k)] - ap[r]) * db[r];
            }
            *o += scale * p[k] * s;
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.states(), self.model.assets())
    }
}
