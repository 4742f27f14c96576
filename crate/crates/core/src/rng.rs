//! Seeded random streams. Every path owns a stream derived from `(seed, path_index)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::scalar::Real;

pub type PathRng = ChaCha8Rng;

/// Independent generator for one path of a run.
pub fn path_rng(seed: u64, path_index: u64) -> PathRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path_index);
    rng
}

/// Mixes a tag into a seed (splitmix64 finalizer) to derive sub-run seeds.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
pub fn normal<T: Real, R: Rng + ?Sized>(rng: &mut R) -> T {
    let x: f64 = rng.sample(StandardNormal);
    T::lit(x)
}

/// Uniform draw on the open interval (0, 1).
#[inline]
pub fn uniform_open<T: Real, R: Rng + ?Sized>(rng: &mut R) -> T {
    loop {
        let x: f64 = rng.random();
        if x > 0.0 {
            return T::lit(x);
        }
    }
}

/// Exponential draw with the given rate.
#[inline]
pub fn exponential<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    let u: f64 = loop {
        let x: f64 = rng.random();
        if x > 0.0 {
            break x;
        }
    };
    -u.ln() / rate
}
