//! Gauss–Legendre rules on the unit interval and their tensor products.

use crate::scalar::Real;

/// Gauss–Legendre rule mapped to `[0, 1]`; weights sum to one.
#[derive(Clone, Debug)]
pub struct GaussLegendre<T> {
    pub nodes: Vec<T>,
    pub weights: Vec<T>,
}

impl<T: Real> GaussLegendre<T> {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "at least one node");
        let (x, w) = legendre_nodes(n);
        Self {
            nodes: x.iter().map(|&xi| T::lit(0.5 * (xi + 1.0))).collect(),
            weights: w.iter().map(|&wi| T::lit(0.5 * wi)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Integrates `f` over `[a, b]`.
    pub fn integrate<F: FnMut(T) -> T>(&self, a: T, b: T, mut f: F) -> T {
        let len = b - a;
        let mut acc = T::zero();
        for (&x, &w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(a + len * x);
        }
        acc * len
    }
}

/// Nodes and weights on `[-1, 1]` by Newton iteration on the Legendre polynomial.
fn legendre_nodes(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { z } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = nf * (z * pn - pm1) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        if n == 1 {
            x[0] = 0.0;
            w[0] = 2.0;
            break;
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Tensor product of a one-dimensional rule on `[0, 1]^dim`, stored flat.
#[derive(Clone, Debug)]
pub struct TensorRule<T> {
    pub dim: usize,
    pub points: Vec<T>,
    pub weights: Vec<T>,
}

impl<T: Real> TensorRule<T> {
    pub fn new(dim: usize, nodes_per_dim: usize) -> Self {
        let rule = GaussLegendre::<T>::new(nodes_per_dim);
        let count = nodes_per_dim.pow(dim as u32);
        let mut points = Vec::with_capacity(count * dim);
        let mut weights = Vec::with_capacity(count);
        let mut idx = vec![0usize; dim];
        for _ in 0..count {
            let mut w = T::one();
            for &j in &idx {
                points.push(rule.nodes[j]);
                w *= rule.weights[j];
            }
            weights.push(w);
            for slot in idx.iter_mut().rev() {
                *slot += 1;
                if *slot < nodes_per_dim {
                    break;
                }
                *slot = 0;
            }
        }
        Self {
            dim,
            points,
            weights,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, q: usize) -> &[T] {
        &self.points[q * self.dim..(q + 1) * self.dim]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_polynomials_exactly() {
        for n in 1..12 {
            let rule = GaussLegendre::<f64>::new(n);
            for deg in 0..(2 * n) {
                let got = rule.integrate(0.0, 1.0, |x| x.powi(deg as i32));
                let exact = 1.0 / (deg as f64 + 1.0);
                assert!((got - exact).abs() < 1e-13, "n={n} deg={deg} got={got}");
            }
        }
    }

    #[test]
    fn gaussian_integral_on_interval() {
        let rule = GaussLegendre::<f64>::new(32);
        let got = rule.integrate(-1.0, 2.0, |x| (-x * x).exp());
        let exact = 0.5 * std::f64::consts::PI.sqrt() * (libm::erf(2.0) + libm::erf(1.0));
        assert!((got - exact).abs() < 1e-14, "{got} {exact}");
    }

    #[test]
    fn tensor_weights_sum_to_one() {
        let t = TensorRule::<f64>::new(3, 5);
        assert_eq!(t.len(), 125);
        let s: f64 = t.weights.iter().sum();
        assert!((s - 1.0).abs() < 1e-14);
        let m: f64 = (0..t.len()).map(|q| t.weights[q] * t.point(q)[0] * t.point(q)[2]).sum();
        assert!((m - 0.25).abs() < 1e-14);
    }
}
