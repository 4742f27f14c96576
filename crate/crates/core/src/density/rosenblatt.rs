use crate::error::{Error, Result};
use crate::model::{dist_to_restricted, lift_unchecked, RestrictedPoint};
use crate::quadrature::GaussLegendre;
use crate::scalar::Real;

use super::DensityFamily;

/// Rosenblatt transform of the mixture density `sum_k p_k f_k` for a fixed `p`.
///
/// Marginals are obtained by integrating out trailing coordinates with a
/// tensor Gauss–Legendre rule; conditional CDFs integrate the marginal along
/// the current coordinate with the same rule mapped to `[a_k, z_k]`.
pub struct Rosenblatt<'a, T: Real> {
    family: &'a DensityFamily<T>,
    p: &'a [T],
    rule: &'a GaussLegendre<T>,
}

const MAX_ITER: usize = 200;

impl<'a, T: Real> Rosenblatt<'a, T> {
    pub fn new(family: &'a DensityFamily<T>, p: &'a [T], rule: &'a GaussLegendre<T>) -> Self {
        Self { family, p, rule }
    }

    /// Integral of the mixture density over coordinates `k..kappa`, with the
    /// leading coordinates taken from `z[..k]`. `z` is scratch for the rest.
    fn tail(&self, z: &mut [T], k: usize) -> T {
        let kappa = z.len();
        if k == kappa {
            return self.family.mix(z, self.p);
        }
        let (a, b) = (self.family.lower()[k], self.family.upper()[k]);
        let len = b - a;
        let mut acc = T::zero();
        for (&x, &w) in self.rule.nodes.iter().zip(&self.rule.weights) {
            z[k] = a + len * x;
            acc += w * self.tail(z, k + 1);
        }
        acc * len
    }

    /// Unnormalized conditional CDF of coordinate `k` at `x` (leading
    /// coordinates fixed in `z[..k]`).
    fn partial_cdf(&self, z: &mut [T], k: usize, x: T) -> T {
        let a = self.family.lower()[k];
        if x <= a {
            return T::zero();
        }
        let len = x - a;
        let mut acc = T::zero();
        for (&q, &w) in self.rule.nodes.iter().zip(&self.rule.weights) {
            z[k] = a + len * q;
            acc += w * self.tail(z, k + 1);
        }
        acc * len
    }

    fn denominator(&self, z: &mut [T], k: usize) -> Result<T> {
        let den = self.tail(z, k);
        if !(den > T::zero()) || !den.is_finite() {
            return Err(Error::Quadrature(format!(
                "marginal density at level {} evaluated to {den}",
                k + 1
            )));
        }
        Ok(den)
    }

    /// The transform: component `k` is the conditional CDF of `Z_k` given
    /// `Z_1..Z_{k-1}` evaluated at `z`.
    pub fn transform(&self, z: &[T]) -> Result<Vec<T>> {
        let kappa = z.len();
        let mut buf = z.to_vec();
        let mut out = Vec::with_capacity(kappa);
        for k in 0..kappa {
            let (a, b) = (self.family.lower()[k], self.family.upper()[k]);
            buf[..k].copy_from_slice(&z[..k]);
            let den = self.denominator(&mut buf, k)?;
            let val = if z[k] <= a {
                T::zero()
            } else if z[k] >= b {
                T::one()
            } else {
                buf[..k].copy_from_slice(&z[..k]);
                (self.partial_cdf(&mut buf, k, z[k]) / den).max(T::zero()).min(T::one())
            };
            out.push(val);
        }
        Ok(out)
    }

    /// The inverse transform `G`: solves the conditional CDF equations one
    /// coordinate at a time by bracketed Newton iteration.
    pub fn inverse(&self, u: &[T]) -> Result<Vec<T>> {
        let kappa = u.len();
        let mut z = vec![T::zero(); kappa];
        let mut buf = vec![T::zero(); kappa];
        for k in 0..kappa {
            let (a, b) = (self.family.lower()[k], self.family.upper()[k]);
            if u[k] <= T::zero() {
                z[k] = a;
                continue;
            }
            if u[k] >= T::one() {
                z[k] = b;
                continue;
            }
            buf[..k].copy_from_slice(&z[..k]);
            let den = self.denominator(&mut buf, k)?;
            z[k] = self.solve_coordinate(&mut buf, &z[..k], k, u[k], den)?;
        }
        Ok(z)
    }

    fn solve_coordinate(&self, buf: &mut [T], prefix: &[T], k: usize, target: T, den: T) -> Result<T> {
        let (a, b) = (self.family.lower()[k], self.family.upper()[k]);
        let span = b - a;
        let tol = T::lit(1e-13).max(T::eps() * T::lit(64.0)) * span;
        let (mut lo, mut hi) = (a, b);
        let mut x = a + span * target;
        for _ in 0..MAX_ITER {
            buf[..k].copy_from_slice(prefix);
            let resid = self.partial_cdf(buf, k, x) / den - target;
            if resid == T::zero() {
                return Ok(x);
            }
            if resid < T::zero() {
                lo = x;
            } else {
                hi = x;
            }
            buf[..k].copy_from_slice(prefix);
            buf[k] = x;
            let slope = self.tail(buf, k + 1) / den;
            let mut next = x - resid / slope;
            if !(next > lo && next < hi) {
                next = (lo + hi) * T::lit(0.5);
            }
            if (next - x).abs() <= tol || hi - lo <= tol {
                return Ok(next);
            }
            x = next;
        }
        Err(Error::Convergence(format!(
            "conditional quantile of coordinate {} at level {target} (bracket [{lo}, {hi}])",
            k + 1
        )))
    }
}

fn check_unit<T: Real>(u: &[T]) -> Result<()> {
    if u.iter().any(|&x| !(x >= T::zero() && x <= T::one())) {
        return Err(Error::Domain("uniform marks must lie in [0, 1]".into()));
    }
    Ok(())
}

/// Rosenblatt transform `F(z, p)` with domain checks.
pub fn marginal_cdf_chain<T: Real>(
    family: &DensityFamily<T>,
    z: &[T],
    p: &[T],
    rule: &GaussLegendre<T>,
) -> Result<Vec<T>> {
    family.check_signal(z)?;
    Rosenblatt::new(family, p, rule).transform(z)
}

/// Inverse Rosenblatt transform `G(u, p)` with domain checks.
pub fn inverse_rosenblatt<T: Real>(
    family: &DensityFamily<T>,
    u: &[T],
    p: &[T],
    rule: &GaussLegendre<T>,
) -> Result<Vec<T>> {
    if u.len() != family.kappa() {
        return Err(Error::Domain(format!(
            "mark has dimension {}, expected {}",
            u.len(),
            family.kappa()
        )));
    }
    check_unit(u)?;
    Rosenblatt::new(family, p, rule).inverse(u)
}

/// Jump of the restricted state driven by the uniform mark `u`:
/// `pi_k (f_k(z) / fbar(z) - 1)` with `z = G(u, R pi)`.
pub fn jump_coeff<T: Real>(
    family: &DensityFamily<T>,
    rule: &GaussLegendre<T>,
    pi: &RestrictedPoint<T>,
    u: &[T],
    eps: T,
) -> Result<Vec<T>> {
    let dist = dist_to_restricted(&pi.pi);
    if dist > eps {
        return Err(Error::Domain(format!(
            "state at distance {dist} is outside the extension {eps}"
        )));
    }
    let p = lift_unchecked(&pi.pi);
    let z = inverse_rosenblatt(family, u, &p, rule)?;
    Ok(jump_at_signal(family, &pi.pi, &p, &z))
}

/// Jump given an already transformed signal `z`.
#[inline]
pub(crate) fn jump_at_signal<T: Real>(family: &DensityFamily<T>, pi: &[T], p: &[T], z: &[T]) -> Vec<T> {
    let fb = family.mix(z, p);
    pi.iter()
        .enumerate()
        .map(|(k, &pk)| pk * (family.value(k, z) / fb - T::one()))
        .collect()
}
