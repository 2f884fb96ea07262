//! Weight initialization.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::Real;

/// Standard deviation of freshly initialized convolution weights.
pub const INIT_STD: f64 = 0.02;

/// Draws `count` i.i.d. samples from N(0, 0.02^2).
///
/// Sampling is done in `f64` and cast afterwards, so the same seed produces
/// the same parameters (up to rounding) in every precision.
pub fn normal_init<T: Real>(rng: &mut impl Rng, count: usize) -> Vec<T> {
    let dist = Normal::new(0.0, INIT_STD).expect("valid normal parameters");
    (0..count).map(|_| T::from_f64(dist.sample(rng))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sample_moments_match_the_target_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        let n = 200_000;
        let samples: Vec<f64> = normal_init(&mut rng, n);
        let mean: f64 = samples.iter().sum::<f64>() / n as f64;
        let var: f64 = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 5e-4, "mean {mean}");
        let sd = var.sqrt();
        assert!((sd - INIT_STD).abs() < 5e-4, "sd {sd}");
    }

    #[test]
    fn same_seed_same_stream() {
        let a: Vec<f64> = normal_init(&mut ChaCha8Rng::seed_from_u64(9), 32);
        let b: Vec<f64> = normal_init(&mut ChaCha8Rng::seed_from_u64(9), 32);
        assert_eq!(a, b);
    }

    #[test]
    fn f32_samples_are_casts_of_the_f64_stream() {
        let a: Vec<f64> = normal_init(&mut ChaCha8Rng::seed_from_u64(5), 16);
        let b: Vec<f32> = normal_init(&mut ChaCha8Rng::seed_from_u64(5), 16);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(*x as f32, *y);
        }
    }
}
