//! Floating point abstraction shared by the numerical routines.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;
use std::fmt::{Display, LowerExp};

/// Scalar type accepted by the library: `f32` or `f64`.
pub trait Real:
    RealField
    + Copy
    + FromPrimitive
    + ToPrimitive
    + Display
    + LowerExp
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` constant into the scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 constant must be representable")
    }

    /// Lossy conversion back to `f64` for reporting.
    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Converts a count into the scalar type.
    #[inline]
    fn count(n: usize) -> Self {
        Self::from_usize(n).expect("count must be representable")
    }

    /// Machine epsilon of the scalar type.
    #[inline]
    fn eps() -> Self {
        Self::default_epsilon()
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Sum of a slice, accumulated left to right.
#[inline]
pub fn sum<T: Real>(xs: &[T]) -> T {
    xs.iter().fold(T::zero(), |acc, &x| acc + x)
}

/// Maximum absolute entry of a slice (0 for an empty slice).
#[inline]
pub fn max_abs<T: Real>(xs: &[T]) -> T {
    xs.iter().fold(T::zero(), |acc, &x| acc.max(x.abs()))
}

/// Euclidean norm of a slice.
#[inline]
pub fn norm2<T: Real>(xs: &[T]) -> T {
    xs.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt()
}

/// Squared Euclidean distance between two slices of equal length.
#[inline]
pub fn dist2_sq<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y))
}

/// Dot product.
#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Converts a slice of `f64` values.
pub fn from_f64_slice<T: Real>(xs: &[f64]) -> Vec<T> {
    xs.iter().map(|&x| T::lit(x)).collect()
}

/// Converts a slice into `f64` values.
pub fn to_f64_vec<T: Real>(xs: &[T]) -> Vec<f64> {
    xs.iter().map(|&x| x.as_f64()).collect()
}
