//! Encoder / residual-bottleneck / decoder generator.

use rand::Rng;

use super::{visit_bn, visit_conv, visit_resblock, visit_tconv, BlobRef, ModelError};
use crate::nn::{BatchNorm, Conv2d, ConvTranspose2d, NormMode, ResidualBlock};
use crate::tensor::{Real, Tensor};

struct DownBlock<T: Real> {
    conv: Conv2d<T>,
    bn: BatchNorm<T>,
}

struct UpBlock<T: Real> {
    tconv: ConvTranspose2d<T>,
    bn: BatchNorm<T>,
}

/// Single-channel image-to-image generator.
///
/// Three stride-2 convolutions (kernel 4, padding 1) take channels
/// `1 → w → 2w → 4w` while halving the spatial extent each time; eight
/// channel-preserving residual blocks form the bottleneck; three stride-2
/// transposed convolutions mirror the encoder back to one channel, and a
/// final tanh maps into `[-1, 1]`. Each convolution except the output layer
/// is followed by batch normalization and ReLU.
///
/// The optional attention map multiplies the first encoder block's
/// post-activation features, weighting every channel by the same spatial
/// grid.
pub struct Generator<T: Real> {
    enc: Vec<DownBlock<T>>,
    enc_res: Vec<ResidualBlock<T>>,
    dec_res: Vec<ResidualBlock<T>>,
    dec: Vec<UpBlock<T>>,
    out: ConvTranspose2d<T>,
}

impl<T: Real> Generator<T> {
    const RES_BLOCKS_PER_SIDE: usize = 4;

    pub(crate) fn new(base_width: usize, rng: &mut impl Rng) -> Self {
        let w = base_width;
        let enc = vec![
            DownBlock {
                conv: Conv2d::new(1, w, 4, 2, 1, rng),
                bn: BatchNorm::new(w),
            },
            DownBlock {
                conv: Conv2d::new(w, 2 * w, 4, 2, 1, rng),
                bn: BatchNorm::new(2 * w),
            },
            DownBlock {
                conv: Conv2d::new(2 * w, 4 * w, 4, 2, 1, rng),
                bn: BatchNorm::new(4 * w),
            },
        ];
        let enc_res = (0..Self::RES_BLOCKS_PER_SIDE)
            .map(|_| ResidualBlock::new(4 * w, rng))
            .collect();
        let dec_res = (0..Self::RES_BLOCKS_PER_SIDE)
            .map(|_| ResidualBlock::new(4 * w, rng))
            .collect();
        let dec = vec![
            UpBlock {
                tconv: ConvTranspose2d::new(4 * w, 2 * w, 4, 2, 1, rng),
                bn: BatchNorm::new(2 * w),
            },
            UpBlock {
                tconv: ConvTranspose2d::new(2 * w, w, 4, 2, 1, rng),
                bn: BatchNorm::new(w),
            },
        ];
        let out = ConvTranspose2d::new(w, 1, 4, 2, 1, rng);
        Generator {
            enc,
            enc_res,
            dec_res,
            dec,
            out,
        }
    }

    /// Synthesizes a CT-like image from an MR slice `[n, 1, h, w]`.
    ///
    /// When `attention` is given it must be `[n, 1, h/2, w/2]` — the spatial
    /// size of the first encoder feature map — and is multiplied into those
    /// features, broadcast across channels. `None` skips the weighting,
    /// which is numerically identical to an all-ones map.
    pub fn forward(
        &self,
        mr: &Tensor<T>,
        attention: Option<&Tensor<T>>,
        mode: NormMode,
    ) -> Result<Tensor<T>, ModelError> {
        let shape = mr.shape();
        if shape.len() != 4 || shape[2] % 8 != 0 || shape[3] % 8 != 0 {
            return Err(ModelError::SizeNotDivisible {
                h: shape.get(2).copied().unwrap_or(0),
                w: shape.get(3).copied().unwrap_or(0),
            });
        }

        let mut h = self.enc[0].bn.forward(&self.enc[0].conv.forward(mr)?, mode)?.relu();
        if let Some(att) = attention {
            let expected = vec![shape[0], 1, shape[2] / 2, shape[3] / 2];
            if att.shape() != expected.as_slice() {
                return Err(ModelError::AttentionShape {
                    expected,
                    got: att.shape().to_vec(),
                });
            }
            h = h.mul(att)?;
        }
        for block in &self.enc[1..] {
            h = block.bn.forward(&block.conv.forward(&h)?, mode)?.relu();
        }
        for block in self.enc_res.iter().chain(&self.dec_res) {
            h = block.forward(&h, mode)?;
        }
        for block in &self.dec {
            h = block.bn.forward(&block.tconv.forward(&h)?, mode)?.relu();
        }
        Ok(self.out.forward(&h)?.tanh())
    }

    pub(crate) fn visit_blobs<'a>(&'a self, prefix: &str, f: &mut impl FnMut(String, BlobRef<'a, T>)) {
        for (i, block) in self.enc.iter().enumerate() {
            visit_conv(&format!("{prefix}.enc{i}.conv"), &block.conv, f);
            visit_bn(&format!("{prefix}.enc{i}.bn"), &block.bn, f);
        }
        for (i, block) in self.enc_res.iter().enumerate() {
            visit_resblock(&format!("{prefix}.enc_res{i}"), block, f);
        }
        for (i, block) in self.dec_res.iter().enumerate() {
            visit_resblock(&format!("{prefix}.dec_res{i}"), block, f);
        }
        for (i, block) in self.dec.iter().enumerate() {
            visit_tconv(&format!("{prefix}.dec{i}.tconv"), &block.tconv, f);
            visit_bn(&format!("{prefix}.dec{i}.bn"), &block.bn, f);
        }
        visit_tconv(&format!("{prefix}.out"), &self.out, f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_input(h: usize, w: usize, seed: u64) -> Tensor<f64> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vals: Vec<f64> = (0..h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::new(&[1, 1, h, w], vals, false).unwrap()
    }

    #[test]
    fn output_shape_equals_input_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = Generator::<f64>::new(2, &mut rng);
        for &(h, w) in &[(16usize, 16usize), (32, 32), (24, 40)] {
            let x = random_input(h, w, 1);
            let y = g.forward(&x, None, NormMode::Train).unwrap();
            assert_eq!(y.shape(), &[1, 1, h, w]);
        }
    }

    #[test]
    fn output_lands_in_the_tanh_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = Generator::<f64>::new(2, &mut rng);
        let y = g.forward(&random_input(16, 16, 2), None, NormMode::Train).unwrap();
        assert!(y.to_vec().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn indivisible_input_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = Generator::<f64>::new(2, &mut rng);
        let x = Tensor::new(&[1, 1, 20, 16], vec![0.0; 320], false).unwrap();
        assert!(matches!(
            g.forward(&x, None, NormMode::Train),
            Err(ModelError::SizeNotDivisible { h: 20, w: 16 })
        ));
    }

    #[test]
    fn all_ones_attention_is_bit_identical_to_no_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Generator::<f64>::new(2, &mut rng);
        let x = random_input(16, 16, 4);
        let ones = Tensor::full(&[1, 1, 8, 8], 1.0).unwrap();
        let plain = g.forward(&x, None, NormMode::Train).unwrap();
        let attended = g.forward(&x, Some(&ones), NormMode::Train).unwrap();
        assert_eq!(plain.to_vec(), attended.to_vec());
    }

    #[test]
    fn nontrivial_attention_changes_the_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = Generator::<f64>::new(2, &mut rng);
        let x = random_input(16, 16, 5);
        let mut att_vals = vec![1.0; 64];
        att_vals[..32].fill(0.0);
        let att = Tensor::new(&[1, 1, 8, 8], att_vals, false).unwrap();
        let plain = g.forward(&x, None, NormMode::Train).unwrap();
        let attended = g.forward(&x, Some(&att), NormMode::Train).unwrap();
        assert_ne!(plain.to_vec(), attended.to_vec());
    }

    #[test]
    fn wrong_attention_shape_is_rejected_with_both_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = Generator::<f64>::new(2, &mut rng);
        let x = random_input(16, 16, 6);
        let att = Tensor::full(&[1, 1, 4, 4], 1.0).unwrap();
        match g.forward(&x, Some(&att), NormMode::Train) {
            Err(ModelError::AttentionShape { expected, got }) => {
                assert_eq!(expected, vec![1, 1, 8, 8]);
                assert_eq!(got, vec![1, 1, 4, 4]);
            }
            other => panic!("expected attention shape error, got {:?}", other.map(|t| t.shape().to_vec())),
        }
    }
}
