use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::DataError;
use crate::autodiff::Tensor;
use crate::rng::splitmix64;

/// Isotropic Gaussian jitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    pub sigma: f64,
    pub seed: u64,
}

impl AugmentationSpec {
    pub fn new(sigma: f64, seed: u64) -> Result<Self, DataError> {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(DataError::BadNoise(sigma));
        }
        Ok(Self { sigma, seed })
    }
}

fn stream_seed(seed: u64, index: usize, draw: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ index as u64) ^ draw)
}

/// `x` plus `N(0, σ²)` noise per coordinate.
///
/// The noise depends only on `(spec.seed, index, draw)`, so the same view
/// can be regenerated independently of evaluation order.
pub fn augment(x: &[f64], spec: &AugmentationSpec, index: usize, draw: u64) -> Vec<f64> {
    if spec.sigma == 0.0 {
        return x.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(spec.seed, index, draw));
    x.iter()
        .map(|v| v + spec.sigma * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Augments rows `indices` of `samples` into a `[indices.len(), d]` batch.
pub fn augment_rows(
    samples: &Tensor,
    indices: &[usize],
    spec: &AugmentationSpec,
    draw: u64,
) -> Tensor {
    let d = samples.shape()[1];
    let mut data = Vec::with_capacity(indices.len() * d);
    for &i in indices {
        data.extend(augment(&samples.data()[i * d..(i + 1) * d], spec, i, draw));
    }
    Tensor::from_parts(vec![indices.len(), d], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_sigma_is_identity() {
        let spec = AugmentationSpec::new(0.0, 3).unwrap();
        assert_eq!(augment(&[1.0, -2.0], &spec, 4, 9), vec![1.0, -2.0]);
    }

    #[test]
    fn reproducible_per_stream() {
        let spec = AugmentationSpec::new(0.1, 11).unwrap();
        let x = [0.5; 6];
        assert_eq!(augment(&x, &spec, 2, 5), augment(&x, &spec, 2, 5));
        assert_ne!(augment(&x, &spec, 2, 5), augment(&x, &spec, 2, 6));
        assert_ne!(augment(&x, &spec, 2, 5), augment(&x, &spec, 3, 5));
    }

    #[test]
    fn rejects_negative_sigma() {
        assert_eq!(
            AugmentationSpec::new(-0.1, 0),
            Err(DataError::BadNoise(-0.1))
        );
        assert!(AugmentationSpec::new(f64::NAN, 0).is_err());
    }

    #[test]
    fn squared_displacement_matches_variance() {
        let spec = AugmentationSpec::new(0.3, 1).unwrap();
        let x = vec![2.0; 16];
        let draws = 10_000;
        let total: f64 = (0..draws)
            .map(|t| {
                augment(&x, &spec, 0, t)
                    .iter()
                    .zip(&x)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
            })
            .sum();
        let expected = 0.3 * 0.3 * 16.0;
        let mean = total / draws as f64;
        assert!(
            (mean - expected).abs() / expected < 0.05,
            "{mean} vs {expected}"
        );
    }

    #[test]
    fn rows_match_single_calls() {
        let samples = Tensor::from_rows(&[vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0, 5.0]]).unwrap();
        let spec = AugmentationSpec::new(0.2, 7).unwrap();
        let batch = augment_rows(&samples, &[2, 0], &spec, 1);
        assert_eq!(batch.shape(), &[2, 2]);
        assert_eq!(
            &batch.data()[..2],
            augment(&[4.0, 5.0], &spec, 2, 1).as_slice()
        );
        assert_eq!(
            &batch.data()[2..],
            augment(&[0.0, 1.0], &spec, 0, 1).as_slice()
        );
    }
}
