//! Kaiming weight initialization.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

/// Gain for a leaky-ReLU nonlinearity with the given negative slope.
pub fn leaky_relu_gain(slope: f64) -> f64 {
    (2.0 / (1.0 + slope * slope)).sqrt()
}

/// Normal weights with standard deviation `gain / sqrt(fan_in)`.
pub fn kaiming_normal<R: Rng + ?Sized>(rng: &mut R, len: usize, fan_in: usize, gain: f64) -> Vec<f64> {
    let std = gain / (fan_in.max(1) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    (0..len).map(|_| normal.sample(rng)).collect()
}

/// Uniform weights on `[-bound, bound)` with `bound = gain * sqrt(3 / fan_in)`.
pub fn kaiming_uniform<R: Rng + ?Sized>(rng: &mut R, len: usize, fan_in: usize, gain: f64) -> Vec<f64> {
    let bound = gain * (3.0 / fan_in.max(1) as f64).sqrt();
    if bound == 0.0 {
        return vec![0.0; len];
    }
    let uniform = Uniform::new(-bound, bound).expect("positive bound");
    (0..len).map(|_| uniform.sample(rng)).collect()
}

/// Gain used for the decision layer: `sqrt(2 / (1 + 5))`, so the bound is `1 / sqrt(fan_in)`.
pub const DECISION_LAYER_GAIN: f64 = 0.577_350_269_189_625_8;
