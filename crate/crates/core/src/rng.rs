//! Deterministic random numbers.
//!
//! All randomness in the crate comes from ChaCha8 (`rand_chacha`), keyed by
//! `SeedableRng::seed_from_u64`. Floats are derived from raw 64-bit outputs
//! with fixed bit arithmetic, and Gaussian draws use Box-Muller through the
//! pure-Rust `libm` routines, so a given seed produces the same values on
//! every platform.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Distribution {
    /// Uniform on `[-1, 1)` with 2^-23 resolution.
    Uniform,
    /// Normal with mean 0 and the given standard deviation.
    Gaussian { std_dev: f32 },
}

#[derive(Debug, Clone)]
pub struct SeededRng(ChaCha8Rng);

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Derives an independent stream for sub-component `index`.
    pub fn derive(seed: u64, index: u64) -> Self {
        Self::new(seed ^ index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits.
    pub fn unit_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[-1, 1)`; exactly representable `k * 2^-23`.
    pub fn uniform_pm1(&mut self) -> f32 {
        let k = (self.next_u64() >> 40) as i32; // 24 bits
        (k - (1 << 23)) as f32 * (1.0 / (1u32 << 23) as f32)
    }

    pub fn gaussian(&mut self, std_dev: f32) -> f32 {
        // u1 in (0, 1] keeps the log finite.
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = self.unit_f64();
        let z = libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * std::f64::consts::PI * u2);
        (z * f64::from(std_dev)) as f32
    }

    /// Uniform integer in `0..n` (multiply-shift). `n` must be nonzero.
    pub fn below(&mut self, n: usize) -> usize {
        ((u128::from(self.next_u64()) * n as u128) >> 64) as usize
    }

    pub fn sample(&mut self, dist: Distribution) -> f32 {
        match dist {
            Distribution::Uniform => self.uniform_pm1(),
            Distribution::Gaussian { std_dev } => self.gaussian(std_dev),
        }
    }

    /// `k` distinct indices from `0..n`, ascending. Returns all of `0..n` when `k >= n`.
    pub fn choose_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        if k >= n {
            return (0..n).collect();
        }
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below(n - i);
            pool.swap(i, j);
        }
        let mut picked = pool[..k].to_vec();
        picked.sort_unstable();
        picked
    }
}

/// Row-major `rows x cols` matrix of independent draws from `distribution`.
pub fn seeded_random_matrix(rows: usize, cols: usize, seed: u64, distribution: Distribution) -> Matrix {
    let mut rng = SeededRng::new(seed);
    Matrix::from_fn(rows, cols, |_, _| rng.sample(distribution))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_matrix() {
        let a = seeded_random_matrix(2, 2, 7, Distribution::Uniform);
        let b = seeded_random_matrix(2, 2, 7, Distribution::Uniform);
        assert_eq!(a, b);
        let c = seeded_random_matrix(2, 2, 8, Distribution::Uniform);
        assert_ne!(a, c);
    }

    #[test]
    fn one_by_one_uniform_in_range() {
        let m = seeded_random_matrix(1, 1, 0, Distribution::Uniform);
        let v = m.get(0, 0);
        assert!((-1.0..=1.0).contains(&v));
    }

    #[test]
    fn uniform_range_over_many_draws() {
        let mut rng = SeededRng::new(3);
        for _ in 0..10_000 {
            let v = rng.uniform_pm1();
            assert!((-1.0..1.0).contains(&v));
        }
    }

    #[test]
    fn gaussian_moments() {
        let mut rng = SeededRng::new(11);
        let n = 20_000;
        let xs: Vec<f64> = (0..n).map(|_| f64::from(rng.gaussian(2.0))).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((var.sqrt() - 2.0).abs() < 0.05, "std {}", var.sqrt());
    }

    #[test]
    fn choose_indices_distinct_sorted() {
        let mut rng = SeededRng::new(5);
        let idx = rng.choose_indices(100, 10);
        assert_eq!(idx.len(), 10);
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(rng.choose_indices(3, 10), vec![0, 1, 2]);
    }
}
