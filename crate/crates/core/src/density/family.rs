use std::fmt;
use std::sync::Arc;

use serde::Serialize;
use libm::erf;

use crate::error::{Error, Result};
use crate::quadrature::TensorRule;
use crate::scalar::Real;

/// Largest supported signal dimension.
pub const MAX_SIGNAL_DIM: usize = 3;

/// A continuously differentiable density on the signal rectangle.
pub trait Density<T: Real>: Send + Sync + fmt::Debug {
    fn value(&self, z: &[T]) -> T;
    /// Writes the gradient with respect to `z` into `out`.
    fn gradient(&self, z: &[T], out: &mut [T]);
    /// Integral over the rectangle when known in closed form.
    fn mass(&self, _lower: &[T], _upper: &[T]) -> Option<T> {
        None
    }
    fn label(&self) -> String;
}

/// Constant density `1 / |Z|`.
#[derive(Clone, Debug)]
pub struct Uniform<T> {
    level: T,
    volume: T,
}

impl<T: Real> Uniform<T> {
    pub fn new(lower: &[T], upper: &[T]) -> Self {
        let volume = volume(lower, upper);
        Self {
            level: T::one() / volume,
            volume,
        }
    }
}

impl<T: Real> Density<T> for Uniform<T> {
    fn value(&self, _z: &[T]) -> T {
        self.level
    }

    fn gradient(&self, _z: &[T], out: &mut [T]) {
        out.fill(T::zero());
    }

    fn mass(&self, lower: &[T], upper: &[T]) -> Option<T> {
        Some(volume(lower, upper) / self.volume)
    }

    fn label(&self) -> String {
        "uniform".into()
    }
}

/// Product of one-dimensional Gaussians truncated to the rectangle.
#[derive(Clone, Debug)]
pub struct TruncatedGaussian<T> {
    mean: Vec<T>,
    sd: Vec<T>,
    scale: T,
}

impl<T: Real> TruncatedGaussian<T> {
    pub fn new(mean: Vec<T>, sd: Vec<T>, lower: &[T], upper: &[T]) -> Result<Self> {
        if mean.len() != lower.len() || sd.len() != lower.len() {
            return Err(Error::Config(format!(
                "truncated gaussian needs mean and sd of length {}",
                lower.len()
            )));
        }
        if sd.iter().any(|&s| !(s > T::zero())) {
            return Err(Error::Config("truncated gaussian sd must be positive".into()));
        }
        let mut scale = 1.0;
        for i in 0..mean.len() {
            let (m, s) = (mean[i].as_f64(), sd[i].as_f64());
            let z_mass = normal_cdf((upper[i].as_f64() - m) / s) - normal_cdf((lower[i].as_f64() - m) / s);
            if !(z_mass > 0.0) {
                return Err(Error::Domain("truncated gaussian has no mass on Z".into()));
            }
            scale /= s * (2.0 * std::f64::consts::PI).sqrt() * z_mass;
        }
        Ok(Self {
            mean,
            sd,
            scale: T::lit(scale),
        })
    }
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

impl<T: Real> Density<T> for TruncatedGaussian<T> {
    fn value(&self, z: &[T]) -> T {
        let mut q = T::zero();
        for i in 0..z.len() {
            let u = (z[i] - self.mean[i]) / self.sd[i];
            q += u * u;
        }
        self.scale * (-q * T::lit(0.5)).exp()
    }

    fn gradient(&self, z: &[T], out: &mut [T]) {
        let v = self.value(z);
        for i in 0..z.len() {
            out[i] = -v * (z[i] - self.mean[i]) / (self.sd[i] * self.sd[i]);
        }
    }

    fn mass(&self, lower: &[T], upper: &[T]) -> Option<T> {
        let mut m = self.scale.as_f64();
        for i in 0..lower.len() {
            let (mu, s) = (self.mean[i].as_f64(), self.sd[i].as_f64());
            let seg = normal_cdf((upper[i].as_f64() - mu) / s) - normal_cdf((lower[i].as_f64() - mu) / s);
            m *= s * (2.0 * std::f64::consts::PI).sqrt() * seg;
        }
        Some(T::lit(m))
    }

    fn label(&self) -> String {
        format!("truncated_gaussian(mean={:?}, sd={:?})", self.mean, self.sd)
    }
}

/// `(1 - eps) * base / int_Z base + eps / |Z|`.
#[derive(Clone, Debug)]
pub struct Mixture<T: Real> {
    base: Arc<dyn Density<T>>,
    weight: T,
    floor: T,
}

impl<T: Real> Mixture<T> {
    /// Normalizes `base` over the rectangle and mixes in the uniform density.
    pub fn new(base: Arc<dyn Density<T>>, lower: &[T], upper: &[T], eps_mix: T) -> Result<Self> {
        if !(eps_mix > T::zero() && eps_mix <= T::one()) {
            return Err(Error::Config(format!("eps_mix must lie in (0, 1], got {eps_mix}")));
        }
        let mass = match base.mass(lower, upper) {
            Some(m) => m,
            None => integrate_box(lower, upper, 48, |z| base.value(z)),
        };
        if !(mass > T::zero()) {
            return Err(Error::Domain("mixture base density has no mass on Z".into()));
        }
        Ok(Self {
            weight: (T::one() - eps_mix) / mass,
            floor: eps_mix / volume(lower, upper),
            base,
        })
    }
}

impl<T: Real> Density<T> for Mixture<T> {
    fn value(&self, z: &[T]) -> T {
        if self.weight == T::zero() {
            return self.floor;
        }
        self.weight * self.base.value(z) + self.floor
    }

    fn gradient(&self, z: &[T], out: &mut [T]) {
        self.base.gradient(z, out);
        for g in out.iter_mut() {
            *g *= self.weight;
        }
    }

    fn mass(&self, lower: &[T], upper: &[T]) -> Option<T> {
        let floor_mass = self.floor * volume(lower, upper);
        if self.weight == T::zero() {
            return Some(floor_mass);
        }
        self.base
            .mass(lower, upper)
            .map(|m| self.weight * m + floor_mass)
    }

    fn label(&self) -> String {
        format!("mixture({})", self.base.label())
    }
}

/// Uniform bounds on the family found by grid probing (or supplied).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DensityBounds<T> {
    /// Lower bound `C1` of every density on `Z`.
    pub lower: T,
    /// Upper bound `C2` of every density on `Z`.
    pub upper: T,
    /// Bound `Cd` on every partial derivative.
    pub derivative: T,
    /// Probe points per dimension (0 when supplied analytically).
    pub resolution: usize,
}

/// The `d` state-dependent signal densities on a common rectangle.
#[derive(Clone)]
pub struct DensityFamily<T: Real> {
    lower: Vec<T>,
    upper: Vec<T>,
    components: Vec<Arc<dyn Density<T>>>,
    bounds: DensityBounds<T>,
}

impl<T: Real> fmt::Debug for DensityFamily<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DensityFamily")
            .field("lower", &self.lower)
            .field("upper", &self.upper)
            .field(
                "components",
                &self.components.iter().map(|c| c.label()).collect::<Vec<_>>(),
            )
            .field("bounds", &self.bounds)
            .finish()
    }
}

impl<T: Real> DensityFamily<T> {
    /// Default probe resolution per dimension.
    pub fn default_resolution(kappa: usize) -> usize {
        match kappa {
            1 => 1024,
            2 => 128,
            _ => 32,
        }
    }

    /// Builds the family and probes `C1`, `C2`, `Cd` on a grid.
    pub fn new(lower: Vec<T>, upper: Vec<T>, components: Vec<Arc<dyn Density<T>>>) -> Result<Self> {
        let res = Self::default_resolution(lower.len());
        Self::with_resolution(lower, upper, components, res)
    }

    pub fn with_resolution(
        lower: Vec<T>,
        upper: Vec<T>,
        components: Vec<Arc<dyn Density<T>>>,
        resolution: usize,
    ) -> Result<Self> {
        check_rectangle(&lower, &upper)?;
        if components.is_empty() {
            return Err(Error::Config("signal densities: need one density per state".into()));
        }
        if resolution < 2 {
            return Err(Error::Config("probe resolution must be at least 2".into()));
        }
        let bounds = probe_bounds(&lower, &upper, &components, resolution);
        if !(bounds.lower > T::zero()) {
            return Err(Error::Domain(format!(
                "signal densities must be bounded away from zero on Z (probed minimum {})",
                bounds.lower
            )));
        }
        Ok(Self {
            lower,
            upper,
            components,
            bounds,
        })
    }

    /// Replaces the probed bounds by analytically known ones.
    pub fn with_bounds(mut self, lower: T, upper: T, derivative: T) -> Self {
        self.bounds = DensityBounds {
            lower,
            upper,
            derivative,
            resolution: 0,
        };
        self
    }

    pub fn kappa(&self) -> usize {
        self.lower.len()
    }

    pub fn states(&self) -> usize {
        self.components.len()
    }

    pub fn lower(&self) -> &[T] {
        &self.lower
    }

    pub fn upper(&self) -> &[T] {
        &self.upper
    }

    pub fn volume(&self) -> T {
        volume(&self.lower, &self.upper)
    }

    pub fn bounds(&self) -> DensityBounds<T> {
        self.bounds
    }

    pub fn component(&self, k: usize) -> &dyn Density<T> {
        self.components[k].as_ref()
    }

    #[inline]
    pub fn value(&self, k: usize, z: &[T]) -> T {
        self.components[k].value(z)
    }

    /// Mixture density `sum_k p_k f_k(z)` without domain checks.
    #[inline]
    pub fn mix(&self, z: &[T], p: &[T]) -> T {
        let mut acc = T::zero();
        for (k, &pk) in p.iter().enumerate() {
            if pk != T::zero() {
                acc += pk * self.components[k].value(z);
            }
        }
        acc
    }

    /// Checked mixture density: `z` must lie in `Z` and the restriction of
    /// `p` within max-norm distance `eps` of the restricted simplex.
    pub fn fbar(&self, z: &[T], p: &[T], eps: T) -> Result<T> {
        self.check_signal(z)?;
        if p.len() != self.states() {
            return Err(Error::Domain(format!(
                "state vector has length {}, expected {}",
                p.len(),
                self.states()
            )));
        }
        let dist = crate::model::dist_to_restricted(&p[..p.len() - 1]);
        let tol = T::lit(crate::model::SIMPLEX_TOL);
        if dist > eps || (crate::scalar::sum(p) - T::one()).abs() > tol {
            return Err(Error::Domain(format!(
                "state lies outside the extended simplex (distance {dist}, extension {eps})"
            )));
        }
        Ok(self.mix(z, p))
    }

    pub fn check_signal(&self, z: &[T]) -> Result<()> {
        if z.len() != self.kappa() {
            return Err(Error::Domain(format!(
                "signal has dimension {}, expected {}",
                z.len(),
                self.kappa()
            )));
        }
        let tol = T::lit(1e-12);
        for i in 0..z.len() {
            let span = self.upper[i] - self.lower[i];
            if z[i] < self.lower[i] - tol * span || z[i] > self.upper[i] + tol * span {
                return Err(Error::Domain(format!(
                    "signal component {} = {} lies outside [{}, {}]",
                    i + 1,
                    z[i],
                    self.lower[i],
                    self.upper[i]
                )));
            }
        }
        Ok(())
    }

    /// Largest admissible extension of the simplex, `C1 / ((d - 1) C2)`.
    pub fn eps_max(&self) -> T {
        let d = self.states();
        if d < 2 {
            return T::lit(f64::INFINITY);
        }
        self.bounds.lower / (T::count(d - 1) * self.bounds.upper)
    }

    /// Bounds `(C_*, C^*)` of the mixture density on the `eps`-extended simplex.
    pub fn mixture_bounds(&self, eps: T) -> (T, T) {
        let dm1 = T::count(self.states().saturating_sub(1));
        (
            self.bounds.lower - eps * dm1 * self.bounds.upper,
            (T::one() + eps * dm1) * self.bounds.upper,
        )
    }

    /// `|int_Z f_k - 1|` for each component, by tensor Gauss–Legendre.
    pub fn normalization_errors(&self, nodes_per_dim: usize) -> Vec<T> {
        (0..self.states())
            .map(|k| {
                (integrate_box(&self.lower, &self.upper, nodes_per_dim, |z| self.value(k, z)) - T::one()).abs()
            })
            .collect()
    }
}

/// Builds the family `(1 - eps) f~_k / int f~_k + eps / |Z|` from base densities.
pub fn make_mixture<T: Real>(
    bases: Vec<Arc<dyn Density<T>>>,
    lower: Vec<T>,
    upper: Vec<T>,
    eps_mix: T,
) -> Result<DensityFamily<T>> {
    check_rectangle(&lower, &upper)?;
    let res = DensityFamily::<T>::default_resolution(lower.len());
    for (k, base) in bases.iter().enumerate() {
        let mut bad = None;
        for_each_probe(&lower, &upper, res, |z| {
            if bad.is_none() && !(base.value(z) > T::zero()) {
                bad = Some(z.to_vec());
            }
        });
        if let Some(z) = bad {
            return Err(Error::Domain(format!(
                "base density {} is not positive at {:?}",
                k + 1,
                crate::scalar::to_f64_vec(&z)
            )));
        }
    }
    let comps = bases
        .into_iter()
        .map(|b| Mixture::new(b, &lower, &upper, eps_mix).map(|m| Arc::new(m) as Arc<dyn Density<T>>))
        .collect::<Result<Vec<_>>>()?;
    DensityFamily::with_resolution(lower, upper, comps, res)
}

fn check_rectangle<T: Real>(lower: &[T], upper: &[T]) -> Result<()> {
    if lower.is_empty() || lower.len() > MAX_SIGNAL_DIM {
        return Err(Error::Config(format!(
            "signal dimension must be between 1 and {MAX_SIGNAL_DIM}, got {}",
            lower.len()
        )));
    }
    if lower.len() != upper.len() {
        return Err(Error::Config("signals.lower and signals.upper differ in length".into()));
    }
    if lower.iter().zip(upper).any(|(&a, &b)| !(b > a)) {
        return Err(Error::Config("signal rectangle must have lower < upper".into()));
    }
    Ok(())
}

pub(crate) fn volume<T: Real>(lower: &[T], upper: &[T]) -> T {
    lower
        .iter()
        .zip(upper)
        .fold(T::one(), |acc, (&a, &b)| acc * (b - a))
}

/// Tensor Gauss–Legendre integral over the rectangle.
pub(crate) fn integrate_box<T: Real, F: FnMut(&[T]) -> T>(
    lower: &[T],
    upper: &[T],
    nodes_per_dim: usize,
    mut f: F,
) -> T {
    let rule = TensorRule::<T>::new(lower.len(), nodes_per_dim);
    let vol = volume(lower, upper);
    let mut z = vec![T::zero(); lower.len()];
    let mut acc = T::zero();
    for q in 0..rule.len() {
        for (i, &u) in rule.point(q).iter().enumerate() {
            z[i] = lower[i] + (upper[i] - lower[i]) * u;
        }
        acc += rule.weights[q] * f(&z);
    }
    acc * vol
}

/// Calls `f` on every point of the uniform probe grid (endpoints included).
pub(crate) fn for_each_probe<T: Real, F: FnMut(&[T])>(lower: &[T], upper: &[T], res: usize, mut f: F) {
    let kappa = lower.len();
    let total = res.pow(kappa as u32);
    let mut idx = vec![0usize; kappa];
    let mut z = vec![T::zero(); kappa];
    let denom = T::count(res - 1);
    for _ in 0..total {
        for i in 0..kappa {
            z[i] = lower[i] + (upper[i] - lower[i]) * T::count(idx[i]) / denom;
        }
        f(&z);
        for slot in idx.iter_mut().rev() {
            *slot += 1;
            if *slot < res {
                break;
            }
            *slot = 0;
        }
    }
}

fn probe_bounds<T: Real>(
    lower: &[T],
    upper: &[T],
    comps: &[Arc<dyn Density<T>>],
    res: usize,
) -> DensityBounds<T> {
    let mut lo = T::lit(f64::INFINITY);
    let mut hi = -T::lit(f64::INFINITY);
    let mut der = T::zero();
    let mut grad = vec![T::zero(); lower.len()];
    for c in comps {
        for_each_probe(lower, upper, res, |z| {
            let v = c.value(z);
            lo = lo.min(v);
            hi = hi.max(v);
            c.gradient(z, &mut grad);
            der = grad.iter().fold(der, |acc, &g| acc.max(g.abs()));
        });
    }
    DensityBounds {
        lower: lo,
        upper: hi,
        derivative: der,
        resolution: res,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gauss(m: f64, s: f64, a: f64, b: f64) -> Arc<dyn Density<f64>> {
        Arc::new(TruncatedGaussian::new(vec![m], vec![s], &[a], &[b]).unwrap())
    }

    #[test]
    fn eps_one_gives_uniform() {
        let fam = make_mixture(vec![gauss(0.2, 0.1, 0.0, 2.0)], vec![0.0], vec![2.0], 1.0).unwrap();
        for z in [0.0, 0.3, 1.7, 2.0] {
            assert_eq!(fam.value(0, &[z]), 0.5);
        }
    }

    #[test]
    fn mixture_floor_on_unit_interval() {
        let fam = make_mixture(vec![gauss(0.5, 0.05, 0.0, 1.0)], vec![0.0], vec![1.0], 0.1).unwrap();
        assert!(fam.bounds().lower >= 0.1);
        assert!(fam.normalization_errors(64)[0] < 1e-6);
    }

    #[test]
    fn truncated_gaussian_normalized() {
        let g = TruncatedGaussian::<f64>::new(vec![0.3, -0.2], vec![0.4, 0.7], &[-1.0, -1.0], &[1.0, 2.0]).unwrap();
        let m: f64 = integrate_box(&[-1.0, -1.0], &[1.0, 2.0], 40, |z| g.value(z));
        assert!((m - 1.0).abs() < 1e-12, "{m}");
        assert!((g.mass(&[-1.0, -1.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fbar_examples() {
        let fam = DensityFamily::new(
            vec![-1.0],
            vec![1.0],
            vec![gauss(0.4, 0.4, -1.0, 1.0), gauss(-0.4, 0.4, -1.0, 1.0)],
        )
        .unwrap();
        let z = [0.1];
        assert_eq!(fam.fbar(&z, &[1.0, 0.0], 0.0).unwrap(), fam.value(0, &z));
        let avg = 0.5 * fam.value(0, &z) + 0.5 * fam.value(1, &z);
        assert!((fam.fbar(&z, &[0.5, 0.5], 0.0).unwrap() - avg).abs() < 1e-15);
        assert!(fam.fbar(&[1.5], &[0.5, 0.5], 0.0).is_err());
        assert!(fam.fbar(&z, &[-0.1, 1.1], 0.05).is_err());
    }

    #[test]
    fn rejects_non_positive_base() {
        #[derive(Debug)]
        struct Tent;
        impl Density<f64> for Tent {
            fn value(&self, z: &[f64]) -> f64 {
                z[0]
            }
            fn gradient(&self, _z: &[f64], out: &mut [f64]) {
                out[0] = 1.0;
            }
            fn label(&self) -> String {
                "tent".into()
            }
        }
        let r = make_mixture(vec![Arc::new(Tent) as Arc<dyn Density<f64>>], vec![0.0], vec![1.0], 0.5);
        assert!(matches!(r, Err(Error::Domain(_))));
    }
}
