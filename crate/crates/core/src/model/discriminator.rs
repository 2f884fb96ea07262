//! Patch-style convolutional discriminator.

use rand::Rng;

use super::{visit_bn, visit_conv, BlobRef, ModelError};
use crate::nn::{BatchNorm, Conv2d, NormMode};
use crate::tensor::{Real, Tensor};

struct DLayer<T: Real> {
    conv: Conv2d<T>,
    /// Batch norm + ReLU follow every layer except the last, which stays
    /// linear so the least-squares objective sees an unbounded score.
    bn: Option<BatchNorm<T>>,
}

/// Six kernel-4 convolutions (strides 2,2,2,2,1,1; channels
/// `w, 2w, 4w, 8w, 8w, 1`), scoring an image by the spatial mean of the
/// final one-channel map.
pub struct Discriminator<T: Real> {
    layers: Vec<DLayer<T>>,
}

/// Scalar score plus the per-layer post-activation feature maps, retained so
/// attention can be distilled from any intermediate layer.
pub struct DiscriminatorOutput<T: Real> {
    pub score: Tensor<T>,
    pub activations: Vec<Tensor<T>>,
}

impl<T: Real> Discriminator<T> {
    pub const LAYERS: usize = 6;

    pub(crate) fn new(base_width: usize, rng: &mut impl Rng) -> Self {
        let w = base_width;
        let plan = [
            (1, w, 2),
            (w, 2 * w, 2),
            (2 * w, 4 * w, 2),
            (4 * w, 8 * w, 2),
            (8 * w, 8 * w, 1),
            (8 * w, 1, 1),
        ];
        let layers = plan
            .iter()
            .enumerate()
            .map(|(i, &(c_in, c_out, stride))| DLayer {
                conv: Conv2d::new(c_in, c_out, 4, stride, 1, rng),
                bn: (i + 1 < Self::LAYERS).then(|| BatchNorm::new(c_out)),
            })
            .collect();
        Discriminator { layers }
    }

    /// Scores an image `[n, 1, h, w]`, returning the scalar score and all
    /// six post-activation feature maps (the final linear map included).
    pub fn discriminate(&self, image: &Tensor<T>, mode: NormMode) -> Result<DiscriminatorOutput<T>, ModelError> {
        let mut h = image.clone();
        let mut activations = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            h = layer.conv.forward(&h)?;
            if let Some(bn) = &layer.bn {
                h = bn.forward(&h, mode)?.relu();
            }
            activations.push(h.clone());
        }
        let score = h.mean_all();
        Ok(DiscriminatorOutput { score, activations })
    }

    pub(crate) fn visit_blobs<'a>(&'a self, prefix: &str, f: &mut impl FnMut(String, BlobRef<'a, T>)) {
        for (i, layer) in self.layers.iter().enumerate() {
            visit_conv(&format!("{prefix}.layer{i}.conv"), &layer.conv, f);
            if let Some(bn) = &layer.bn {
                visit_bn(&format!("{prefix}.layer{i}.bn"), bn, f);
            }
        }
    }

    /// Zeroes the final layer's weight and bias (test hook: forces a zero
    /// score regardless of input).
    #[cfg(test)]
    pub(crate) fn zero_final_layer(&self) {
        let last = self.layers.last().unwrap();
        last.conv.weight.values_mut().fill(T::zero());
        last.conv.bias.values_mut().fill(T::zero());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn image(h: usize, w: usize, seed: u64) -> Tensor<f64> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vals: Vec<f64> = (0..h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::new(&[1, 1, h, w], vals, false).unwrap()
    }

    #[test]
    fn six_activations_with_nonincreasing_spatial_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = Discriminator::<f64>::new(2, &mut rng);
        let out = d.discriminate(&image(64, 64, 1), NormMode::Train).unwrap();
        assert_eq!(out.activations.len(), 6);
        let mut prev = usize::MAX;
        for a in &out.activations {
            let h = a.shape()[2];
            assert!(h <= prev, "spatial sizes must not grow");
            prev = h;
        }
        // 64 -> 32 -> 16 -> 8 -> 4 -> 3 -> 2
        let sizes: Vec<usize> = out.activations.iter().map(|a| a.shape()[2]).collect();
        assert_eq!(sizes, vec![32, 16, 8, 4, 3, 2]);
    }

    #[test]
    fn score_is_a_scalar() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = Discriminator::<f64>::new(2, &mut rng);
        let out = d.discriminate(&image(48, 48, 2), NormMode::Train).unwrap();
        assert_eq!(out.score.rank(), 0);
        assert_eq!(out.score.numel(), 1);
    }

    #[test]
    fn minimum_input_size_is_48() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = Discriminator::<f64>::new(2, &mut rng);
        assert!(d.discriminate(&image(48, 48, 3), NormMode::Train).is_ok());
        // At 32x32 the sixth layer would need a 0x0 output.
        assert!(d.discriminate(&image(32, 32, 3), NormMode::Train).is_err());
    }

    #[test]
    fn zeroed_final_layer_scores_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = Discriminator::<f64>::new(2, &mut rng);
        d.zero_final_layer();
        let out = d.discriminate(&image(48, 48, 4), NormMode::Train).unwrap();
        assert_eq!(out.score.item().unwrap(), 0.0);
    }

    #[test]
    fn channel_progression_follows_the_plan() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = Discriminator::<f64>::new(3, &mut rng);
        let out = d.discriminate(&image(64, 64, 5), NormMode::Train).unwrap();
        let channels: Vec<usize> = out.activations.iter().map(|a| a.shape()[1]).collect();
        assert_eq!(channels, vec![3, 6, 12, 24, 24, 1]);
    }
}
