//! Seeded random sampling.
//!
//! The generator is ChaCha with 12 rounds (`rand_chacha::ChaCha12Rng`), a
//! counter-based stream cipher with a fixed cross-platform output stream.
//! A 64-bit seed is expanded to the 256-bit cipher key with SplitMix64
//! (`SeedableRng::seed_from_u64`), and uniform doubles use the standard
//! 53-bit-mantissa convention, so identical seeds produce identical sample
//! streams on every platform.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::Distribution;

use super::linalg::Cholesky;
use crate::{Error, Result};

/// Mixes a seed with a stream tag into a new seed (SplitMix64 finalizer).
///
/// Used to derive independent, reproducible sub-streams (data generation,
/// parameter initialization, dropout, ...) from one user-facing seed.
pub fn mix_seeds(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A seeded, single-owner random generator.
#[derive(Debug, Clone)]
pub struct RngState {
    inner: ChaCha12Rng,
}

impl RngState {
    /// Creates a generator from a 64-bit seed.
    pub fn from_seed(seed: u64) -> Self {
        Self {
            inner: ChaCha12Rng::seed_from_u64(seed),
        }
    }

    /// Creates a generator for an independent sub-stream of `seed`.
    pub fn derive(seed: u64, stream: u64) -> Self {
        Self::from_seed(mix_seeds(seed, stream))
    }

    /// Uniform draw on `[0, 1)`.
    pub fn standard_uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform draw on `[a, b)`.
    pub fn uniform(&mut self, a: f64, b: f64) -> Result<f64> {
        if !(a < b) || !a.is_finite() || !b.is_finite() {
            return Err(Error::Parameter(format!(
                "uniform interval [{a}, {b}) is empty or non-finite"
            )));
        }
        Ok(a + (b - a) * self.standard_uniform())
    }

    /// Standard normal draw.
    pub fn standard_normal(&mut self) -> f64 {
        rand_distr::StandardNormal.sample(&mut self.inner)
    }

    /// Normal draw with the given mean and standard deviation.
    pub fn normal(&mut self, mean: f64, sd: f64) -> Result<f64> {
        if !(sd > 0.0) || !sd.is_finite() || !mean.is_finite() {
            return Err(Error::Parameter(format!(
                "normal(mean={mean}, sd={sd}) requires finite mean and sd > 0"
            )));
        }
        Ok(mean + sd * self.standard_normal())
    }

    /// Gamma draw in the shape–scale parametrization, valid for all
    /// `shape > 0` (so Gamma(shape, scale) has mean `shape * scale`).
    pub fn gamma(&mut self, shape: f64, scale: f64) -> Result<f64> {
        if !(shape > 0.0) || !(scale > 0.0) || !shape.is_finite() || !scale.is_finite() {
            return Err(Error::Parameter(format!(
                "gamma(shape={shape}, scale={scale}) requires positive finite parameters"
            )));
        }
        let dist = rand_distr::Gamma::new(shape, scale)
            .map_err(|e| Error::Parameter(format!("gamma: {e}")))?;
        Ok(dist.sample(&mut self.inner))
    }

    /// Bernoulli draw; `true` with probability `p`.
    pub fn bernoulli(&mut self, p: f64) -> Result<bool> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Parameter(format!(
                "bernoulli(p={p}) requires p in [0, 1]"
            )));
        }
        Ok(self.standard_uniform() < p)
    }

    /// Multivariate normal draw with the given mean and positive-definite
    /// covariance.
    pub fn mvnormal(&mut self, mean: &Array1<f64>, cov: &Array2<f64>) -> Result<Array1<f64>> {
        let k = mean.len();
        if cov.nrows() != k || cov.ncols() != k {
            return Err(Error::Dimension(format!(
                "mvnormal: mean has length {k} but covariance is {}x{}",
                cov.nrows(),
                cov.ncols(),
            )));
        }
        let chol = Cholesky::factor(&cov.view()).ok_or_else(|| {
            Error::Parameter("mvnormal: covariance is not positive definite".into())
        })?;
        let z = Array1::from_shape_fn(k, |_| self.standard_normal());
        Ok(mean + &chol.lower_triangle_mul(&z))
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, values: &mut [T]) {
        values.shuffle(&mut self.inner);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn first_uniform_draw_is_pinned() {
        // Regression constant recorded once for seed 0; any change means the
        // generator identity changed and every seeded artifact shifts.
        let mut rng = RngState::from_seed(0);
        let first = rng.standard_uniform();
        assert_eq!(first, 0.7311134158637046);
    }

    #[test]
    fn identical_seeds_agree_for_1000_draws() {
        let mut a = RngState::from_seed(42);
        let mut b = RngState::from_seed(42);
        for _ in 0..1000 {
            assert_eq!(a.standard_uniform(), b.standard_uniform());
        }
    }

    #[test]
    fn distinct_seeds_differ() {
        let mut a = RngState::from_seed(1);
        let mut b = RngState::from_seed(2);
        assert_ne!(a.standard_uniform(), b.standard_uniform());
    }

    #[test]
    fn gamma_mean_matches_monte_carlo() {
        // Gamma(theta^2, 1/theta) has mean theta and variance 1.
        for &theta in &[0.6_f64, 2.5] {
            let mut rng = RngState::from_seed(7);
            let n = 1_000_000;
            let mut sum = 0.0;
            for _ in 0..n {
                sum += rng.gamma(theta * theta, 1.0 / theta).unwrap();
            }
            let mean = sum / n as f64;
            let se = 1.0 / (n as f64).sqrt();
            assert!(
                (mean - theta).abs() < 3.0 * se,
                "theta={theta}: mean={mean}"
            );
        }
    }

    #[test]
    fn empty_uniform_interval_is_rejected() {
        let mut rng = RngState::from_seed(0);
        assert!(rng.uniform(0.0, 0.0).is_err());
    }

    #[test]
    fn degenerate_bernoulli() {
        let mut rng = RngState::from_seed(0);
        for _ in 0..100 {
            assert!(!rng.bernoulli(0.0).unwrap());
            assert!(rng.bernoulli(1.0).unwrap());
        }
    }

    #[test]
    fn mvnormal_requires_matching_dimensions() {
        let mut rng = RngState::from_seed(0);
        let mean = array![0.0, 0.0];
        let cov = array![[1.0]];
        assert!(matches!(
            rng.mvnormal(&mean, &cov),
            Err(crate::Error::Dimension(_))
        ));
    }

    #[test]
    fn derived_streams_are_independent_of_each_other() {
        let mut a = RngState::derive(5, 0);
        let mut b = RngState::derive(5, 1);
        assert_ne!(a.standard_uniform(), b.standard_uniform());
    }
}
