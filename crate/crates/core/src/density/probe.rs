use rand::Rng;
use serde::Serialize;

use crate::error::Result;
use crate::model::{dist_to_restricted, lift_unchecked};
use crate::quadrature::GaussLegendre;
use crate::rng::path_rng;
use crate::scalar::{max_abs, Real};

use super::rosenblatt::{jump_at_signal, Rosenblatt};
use super::DensityFamily;

/// Theoretical envelopes built from `C1`, `C2`, `Cd` and the extension `eps`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Envelopes {
    /// Lower bound `C_*` of the mixture density on the extended simplex.
    pub mixture_lower: f64,
    /// Upper bound `C^*` of the mixture density on the extended simplex.
    pub mixture_upper: f64,
    /// Bound on `|dG_l / d pi_j|` (restricted coordinates), maximized over `l`.
    pub dg_dpi: f64,
    /// Max-norm Lipschitz bound of the jump coefficient in the state.
    pub jump_lipschitz: f64,
    /// Growth factor `C2 / C_* + 1` bounding `|jump| / (1 + |p|_inf)`.
    pub jump_growth: f64,
}

impl Envelopes {
    pub fn new<T: Real>(family: &DensityFamily<T>, eps: T) -> Self {
        let b = family.bounds();
        let (c1, c2, cd) = (b.lower.as_f64(), b.upper.as_f64(), b.derivative.as_f64());
        let d = family.states();
        let kappa = family.kappa();
        let eps = eps.as_f64();
        let dm1 = d.saturating_sub(1) as f64;
        let lo_star = c1 - eps * dm1 * c2;
        let hi_star = (1.0 + eps * dm1) * c2;
        let abs_mass = 1.0 + 2.0 * dm1 * eps;
        let lengths: Vec<f64> = (0..kappa)
            .map(|i| (family.upper()[i] - family.lower()[i]).as_f64())
            .collect();

        // Sensitivity of each conditional CDF to one state weight, and of
        // conditional CDFs to earlier coordinates; diagonal entries are the
        // conditional densities, bounded below.
        let dfp = 2.0 * c2 * hi_star / (lo_star * lo_star);
        let off = 2.0 * cd * abs_mass * hi_star / (lo_star * lo_star);
        let diag: Vec<f64> = lengths.iter().map(|&l| lo_star / (hi_star * l)).collect();
        // Inverse of the lower-triangular Jacobian, bounded entrywise.
        let mut inv = vec![vec![0.0; kappa]; kappa];
        for k in 0..kappa {
            inv[k][k] = 1.0 / diag[k];
            for l in 0..k {
                let s: f64 = (l..k).map(|j| off * inv[j][l]).sum();
                inv[k][l] = s / diag[k];
            }
        }
        let dg_dp: Vec<f64> = (0..kappa)
            .map(|l| (0..kappa).map(|i| inv[l][i] * dfp).sum())
            .collect();
        // Restricted coordinates move p_j and the complement p_d together.
        let dg_dpi = 2.0 * dg_dp.iter().cloned().fold(0.0, f64::max);
        let sum_dg = 2.0 * dg_dp.iter().sum::<f64>();
        let ratio_bound = c2 / lo_star + 1.0;
        let c_env = (cd * sum_dg * hi_star + c2 * (c2 + abs_mass * cd * sum_dg)) / (lo_star * lo_star);
        let jump_lipschitz = ratio_bound + 2.0 * dm1 * (1.0 + eps) * c_env;
        Self {
            mixture_lower: lo_star,
            mixture_upper: hi_star,
            dg_dpi,
            jump_lipschitz,
            jump_growth: ratio_bound,
        }
    }
}

/// Finite-difference probes of the inverse transform and the jump coefficient.
#[derive(Clone, Debug, Serialize)]
pub struct BoundReport {
    pub samples: usize,
    pub fd_step: f64,
    pub eps: f64,
    pub eps_max: f64,
    pub c1: f64,
    pub c2: f64,
    pub cd: f64,
    pub probe_resolution: usize,
    pub max_dg_dpi: f64,
    pub max_jump_lipschitz: f64,
    pub max_jump_growth: f64,
    /// Smallest and largest mixture density seen at the probes.
    pub min_mixture: f64,
    pub max_mixture: f64,
    pub envelopes: Envelopes,
}

impl BoundReport {
    /// Every probed quantity stays below `factor` times its envelope.
    pub fn within(&self, factor: f64) -> bool {
        let e = &self.envelopes;
        self.max_dg_dpi.is_finite()
            && self.max_dg_dpi <= factor * e.dg_dpi
            && self.max_jump_lipschitz <= factor * e.jump_lipschitz
            && self.max_jump_growth <= factor * e.jump_growth
            && self.min_mixture >= e.mixture_lower
            && self.max_mixture <= e.mixture_upper
    }
}

/// Samples restricted states in the `eps`-extended simplex and uniform marks,
/// and estimates derivative and Lipschitz bounds with central differences.
pub fn derivative_bound_probe<T: Real>(
    family: &DensityFamily<T>,
    eps: T,
    samples: usize,
    seed: u64,
    rule: &GaussLegendre<T>,
) -> Result<BoundReport> {
    let d = family.states();
    let kappa = family.kappa();
    let h = T::lit(1e-5);
    let b = family.bounds();
    let mut report = BoundReport {
        samples,
        fd_step: 1e-5,
        eps: eps.as_f64(),
        eps_max: family.eps_max().as_f64(),
        c1: b.lower.as_f64(),
        c2: b.upper.as_f64(),
        cd: b.derivative.as_f64(),
        probe_resolution: b.resolution,
        max_dg_dpi: 0.0,
        max_jump_lipschitz: 0.0,
        max_jump_growth: 0.0,
        min_mixture: f64::INFINITY,
        max_mixture: 0.0,
        envelopes: Envelopes::new(family, eps),
    };
    if d < 2 {
        return Ok(report);
    }
    let mut rng = path_rng(seed, 0);
    let inner = (eps - h).max(T::zero());
    let draw_state = |rng: &mut crate::rng::PathRng| loop {
        let pi: Vec<T> = (0..d - 1)
            .map(|_| {
                let x: f64 = rng.random();
                -inner + (T::one() + inner * T::lit(2.0)) * T::lit(x)
            })
            .collect();
        if dist_to_restricted(&pi) <= inner {
            return pi;
        }
    };
    for _ in 0..samples {
        let pi = draw_state(&mut rng);
        let u: Vec<T> = (0..kappa).map(|_| crate::rng::uniform_open(&mut rng)).collect();
        let p = lift_unchecked(&pi);
        let z = Rosenblatt::new(family, &p, rule).inverse(&u)?;
        let fb = family.mix(&z, &p).as_f64();
        report.min_mixture = report.min_mixture.min(fb);
        report.max_mixture = report.max_mixture.max(fb);

        for j in 0..d - 1 {
            let mut up = pi.clone();
            let mut dn = pi.clone();
            up[j] += h;
            dn[j] -= h;
            let pu = lift_unchecked(&up);
            let pd = lift_unchecked(&dn);
            let zu = Rosenblatt::new(family, &pu, rule).inverse(&u)?;
            let zd = Rosenblatt::new(family, &pd, rule).inverse(&u)?;
            for l in 0..kappa {
                let g = ((zu[l] - zd[l]) / (h + h)).abs().as_f64();
                report.max_dg_dpi = report.max_dg_dpi.max(g);
            }
        }

        let jump = jump_at_signal(family, &pi, &p, &z);
        let growth = max_abs(&jump).as_f64() / (1.0 + max_abs(&p).as_f64());
        report.max_jump_growth = report.max_jump_growth.max(growth);

        let other = draw_state(&mut rng);
        let t: f64 = rng.random();
        let scale = T::lit(10f64.powf(-3.0 * t));
        let pi2: Vec<T> = pi
            .iter()
            .zip(&other)
            .map(|(&a, &b)| a + (b - a) * scale)
            .collect();
        let dpi = pi.iter().zip(&pi2).fold(T::zero(), |acc, (&a, &b)| acc.max((a - b).abs()));
        if dpi > T::zero() {
            let p2 = lift_unchecked(&pi2);
            let z2 = Rosenblatt::new(family, &p2, rule).inverse(&u)?;
            let jump2 = jump_at_signal(family, &pi2, &p2, &z2);
            let dj = jump.iter().zip(&jump2).fold(T::zero(), |acc, (&a, &b)| acc.max((a - b).abs()));
            report.max_jump_lipschitz = report.max_jump_lipschitz.max((dj / dpi).as_f64());
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::density::{Density, Uniform};

    #[test]
    fn uniform_family_has_zero_derivatives() {
        let u: Arc<dyn Density<f64>> = Arc::new(Uniform::new(&[0.0], &[2.0]));
        let fam = DensityFamily::new(vec![0.0], vec![2.0], vec![u.clone(), u.clone(), u]).unwrap();
        let rule = GaussLegendre::new(16);
        let r = derivative_bound_probe(&fam, 0.1, 200, 3, &rule).unwrap();
        assert!(r.max_dg_dpi < 1e-9, "{}", r.max_dg_dpi);
        assert!(r.max_jump_lipschitz < 1e-12);
        assert!(r.max_jump_growth < 1e-12);
    }
}
