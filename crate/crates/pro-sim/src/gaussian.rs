//! Scalar Gaussian laws used by the distance and SINR forecasts.

use rand::Rng;
use rand_distr::StandardNormal;
use statrs::function::erf;

use std::f64::consts::SQRT_2;

/// A `(mean, variance)` pair describing a one-dimensional Gaussian law.
///
/// Units follow the context: meters for predicted distances, m/s for
/// velocities, squared units for the variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianSpec {
    pub mean: f64,
    pub variance: f64,
}

impl GaussianSpec {
    pub fn new(mean: f64, variance: f64) -> Self {
        assert!(variance >= 0.0, "variance must be non-negative");
        Self { mean, variance }
    }

    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }

    /// True when the law is a point mass at `mean`.
    pub fn is_degenerate(&self) -> bool {
        self.variance == 0.0
    }

    /// P{X <= x}. Degenerate laws give an exact step.
    pub fn cdf(&self, x: f64) -> f64 {
        if self.is_degenerate() {
            if self.mean <= x {
                1.0
            } else {
                0.0
            }
        } else {
            std_normal_cdf((x - self.mean) / self.std_dev())
        }
    }

    /// Density at `x`; degenerate laws have no density (returns 0).
    pub fn pdf(&self, x: f64) -> f64 {
        if self.is_degenerate() {
            return 0.0;
        }
        let sd = self.std_dev();
        let z = (x - self.mean) / sd;
        (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.is_degenerate() {
            return self.mean;
        }
        let g: f64 = rng.sample(StandardNormal);
        self.mean + self.std_dev() * g
    }

    /// Draws from the law conditioned on `X > lower`.
    ///
    /// Rejection is near-free when the truncation point sits in the far
    /// lower tail (the usual case for positive distances); the inverse-CDF
    /// fallback covers heavily truncated laws.
    pub fn sample_truncated<R: Rng + ?Sized>(&self, lower: f64, rng: &mut R) -> f64 {
        if self.is_degenerate() {
            return self.mean.max(lower);
        }
        for _ in 0..32 {
            let x = self.sample(rng);
            if x > lower {
                return x;
            }
        }
        let sd = self.std_dev();
        let a = std_normal_cdf((lower - self.mean) / sd);
        let u: f64 = rng.random();
        let p = (a + u * (1.0 - a)).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
        self.mean + sd * std_normal_quantile(p)
    }

    /// Mass of the law above `lower`, used to renormalize truncated laws.
    pub fn mass_above(&self, lower: f64) -> f64 {
        1.0 - self.cdf(lower)
    }
}

/// Standard normal CDF.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erf::erfc(-z / SQRT_2)
}

/// Standard normal quantile (inverse CDF) for p in (0, 1).
pub fn std_normal_quantile(p: f64) -> f64 {
    -SQRT_2 * erf::erfc_inv(2.0 * p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cdf_matches_known_values() {
        assert!((std_normal_cdf(0.0) - 0.5).abs() < 1e-12);
        assert!((std_normal_cdf(1.0) - 0.841344746068543).abs() < 1e-9);
        assert!((std_normal_cdf(-1.96) - 0.024997895).abs() < 1e-6);
    }

    #[test]
    fn quantile_inverts_cdf() {
        for &p in &[1e-6, 0.01, 0.25, 0.5, 0.75, 0.99, 1.0 - 1e-6] {
            let z = std_normal_quantile(p);
            assert!((std_normal_cdf(z) - p).abs() < 1e-9, "p = {p}");
        }
    }

    #[test]
    fn truncated_sampling_respects_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let spec = GaussianSpec::new(0.5, 4.0);
        for _ in 0..2000 {
            assert!(spec.sample_truncated(0.1, &mut rng) > 0.1);
        }
    }

    #[test]
    fn truncated_sampling_mean_shifts_up() {
        // Heavy truncation: mean 0, sd 1, keep x > 1. E[X | X > 1] ~= 1.525.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let spec = GaussianSpec::new(0.0, 1.0);
        let n = 200_000;
        let mean: f64 = (0..n).map(|_| spec.sample_truncated(1.0, &mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 1.5251).abs() < 0.01, "mean = {mean}");
    }

    #[test]
    fn degenerate_law_is_a_step() {
        let spec = GaussianSpec::new(3.0, 0.0);
        assert_eq!(spec.cdf(2.9), 0.0);
        assert_eq!(spec.cdf(3.0), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(spec.sample(&mut rng), 3.0);
    }
}
