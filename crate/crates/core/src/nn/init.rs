use rand::Rng;

use crate::real::Real;

/// `sqrt(6 / (fan_in + fan_out))`
pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

pub fn uniform_init<T: Real, R: Rng + ?Sized>(rng: &mut R, n: usize, bound: f64) -> Vec<T> {
    (0..n).map(|_| T::of(rng.gen_range(-bound..=bound))).collect()
}
