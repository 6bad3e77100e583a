//! Gabor filter bank used to initialize the first convolution.
//!
//! `g(x, y) = exp(-(x'² + γ²y'²) / 2σ²) · cos(2πx'/λ + ψ)` with
//! `x' = x cos θ + y sin θ`, `y' = -x sin θ + y cos θ`, `x` the column offset
//! and `y` the row offset from the kernel centre.
//!
//! The bank is a grid of 8 orientations (`θ = kπ/8`) × scales × 2 phases
//! (`ψ = 0` even, `ψ = π/2` odd). Rotating by π maps `x' → -x'`, so an even
//! filter is unchanged and an odd filter flips sign.

use std::f64::consts::{FRAC_PI_2, PI};

use super::FilterBank;
use crate::error::{Error, Result};
use crate::real::Real;

pub const GABOR_ORIENTATIONS: usize = 8;
pub const GABOR_PHASES: [f64; 2] = [0.0, FRAC_PI_2];
const GAMMA: f64 = 0.5;
/// (σ, λ) per scale, finest first.
const SCALES: [(f64, f64); 4] = [(1.0, 2.5), (1.6, 4.0), (2.3, 5.75), (3.0, 7.5)];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaborParams {
    pub theta: f64,
    pub sigma: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub psi: f64,
}

/// Raw (unnormalized) `f_h × f_w` kernel, row-major.
pub fn gabor_kernel(f_h: usize, f_w: usize, p: &GaborParams) -> Vec<f64> {
    let cy = (f_h as f64 - 1.0) / 2.0;
    let cx = (f_w as f64 - 1.0) / 2.0;
    let (sin, cos) = p.theta.sin_cos();
    let mut out = Vec::with_capacity(f_h * f_w);
    for r in 0..f_h {
        for c in 0..f_w {
            let (x, y) = (c as f64 - cx, r as f64 - cy);
            let xr = x * cos + y * sin;
            let yr = -x * sin + y * cos;
            let envelope = (-(xr * xr + p.gamma * p.gamma * yr * yr) / (2.0 * p.sigma * p.sigma)).exp();
            out.push(envelope * (2.0 * PI * xr / p.lambda + p.psi).cos());
        }
    }
    out
}

fn zero_mean_unit_norm(w: &mut [f64]) -> Result<()> {
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    w.iter_mut().for_each(|v| *v -= mean);
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < 1e-12 {
        return Err(Error::arg("gabor filter vanishes after mean removal"));
    }
    w.iter_mut().for_each(|v| *v /= norm);
    Ok(())
}

/// `count` filters over `in_channels`, each replicated across channels,
/// zero-mean and unit L2 norm; biases zero. `count` must be
/// `8 orientations × s scales × 2 phases` for `s` in 1..=4.
pub fn gabor_bank<T: Real>(count: usize, f_h: usize, f_w: usize, in_channels: usize) -> Result<FilterBank<T>> {
    let per_scale = GABOR_ORIENTATIONS * GABOR_PHASES.len();
    if count == 0 || !count.is_multiple_of(per_scale) || count / per_scale > SCALES.len() {
        return Err(Error::arg(format!("gabor bank size {count} is not 8 orientations x 2 phases x (1..=4) scales")));
    }
    if f_h == 0 || f_w == 0 || in_channels == 0 {
        return Err(Error::arg("gabor filter dimensions must be positive"));
    }
    let scales = count / per_scale;
    let mut weights = Vec::with_capacity(count * in_channels * f_h * f_w);
    for o in 0..GABOR_ORIENTATIONS {
        let theta = o as f64 * PI / GABOR_ORIENTATIONS as f64;
        for &(sigma, lambda) in &SCALES[..scales] {
            for &psi in &GABOR_PHASES {
                let plane = gabor_kernel(f_h, f_w, &GaborParams { theta, sigma, lambda, gamma: GAMMA, psi });
                let mut filter: Vec<f64> = (0..in_channels).flat_map(|_| plane.iter().copied()).collect();
                zero_mean_unit_norm(&mut filter)?;
                weights.extend(filter.into_iter().map(T::of));
            }
        }
    }
    FilterBank::new(count, in_channels, f_h, f_w, weights, vec![T::zero(); count])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filters_are_zero_mean_unit_norm() {
        let bank = gabor_bank::<f64>(64, 9, 9, 3).unwrap();
        assert_eq!((bank.count, bank.in_channels, bank.f_h, bank.f_w), (64, 3, 9, 9));
        for f in bank.weights.chunks(bank.filter_len()) {
            let mean = f.iter().sum::<f64>() / f.len() as f64;
            let norm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(mean.abs() < 1e-9);
            assert!((norm - 1.0).abs() < 1e-9);
        }
        assert!(bank.biases.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn channels_replicated() {
        let bank = gabor_bank::<f64>(64, 9, 9, 3).unwrap();
        let f = &bank.weights[..bank.filter_len()];
        assert_eq!(&f[..81], &f[81..162]);
        assert_eq!(&f[..81], &f[162..]);
    }

    #[test]
    fn half_turn_symmetry() {
        for &(sigma, lambda) in &SCALES {
            for o in 0..GABOR_ORIENTATIONS {
                let theta = o as f64 * PI / 8.0;
                let p = |theta, psi| GaborParams { theta, sigma, lambda, gamma: GAMMA, psi };
                let even = gabor_kernel(9, 9, &p(theta, 0.0));
                let even_pi = gabor_kernel(9, 9, &p(theta + PI, 0.0));
                let odd = gabor_kernel(9, 9, &p(theta, FRAC_PI_2));
                let odd_pi = gabor_kernel(9, 9, &p(theta + PI, FRAC_PI_2));
                for i in 0..81 {
                    assert!((even[i] - even_pi[i]).abs() < 1e-12);
                    assert!((odd[i] + odd_pi[i]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn deterministic_and_distinct() {
        let a = gabor_bank::<f64>(64, 9, 9, 3).unwrap();
        let b = gabor_bank::<f64>(64, 9, 9, 3).unwrap();
        assert_eq!(a, b);
        let n = a.filter_len();
        for i in 0..64 {
            for j in i + 1..64 {
                let d: f64 = (0..n).map(|t| (a.weights[i * n + t] - a.weights[j * n + t]).abs()).sum();
                assert!(d > 1e-6, "filters {i} and {j} coincide");
            }
        }
    }

    #[test]
    fn incompatible_counts() {
        assert!(gabor_bank::<f64>(0, 9, 9, 3).is_err());
        assert!(gabor_bank::<f64>(24, 9, 9, 3).is_err());
        assert!(gabor_bank::<f64>(80, 9, 9, 3).is_err());
        assert!(gabor_bank::<f64>(16, 9, 9, 3).is_ok());
    }
}
