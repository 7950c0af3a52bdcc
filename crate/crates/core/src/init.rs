//! Parameter initializers.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

/// Glorot-uniform `fan_in × fan_out` matrix.
pub fn xavier(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Vec<f64> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-a, a).expect("finite bound");
    (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect()
}

/// He-normal weights for a ReLU layer with `fan_in` inputs.
pub fn kaiming(rng: &mut impl Rng, fan_in: usize, n: usize) -> Vec<f64> {
    normal(rng, n, (2.0 / fan_in as f64).sqrt())
}

pub fn normal(rng: &mut impl Rng, n: usize, std: f64) -> Vec<f64> {
    let dist = Normal::new(0.0, std).expect("positive std");
    (0..n).map(|_| dist.sample(rng)).collect()
}
