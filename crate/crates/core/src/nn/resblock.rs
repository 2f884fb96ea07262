//! Channel-preserving residual block.

use rand::Rng;

use super::{BatchNorm, Conv2d, LayerError, NormMode};
use crate::tensor::{Real, Tensor};

/// `x + bn2(conv2(relu(bn1(conv1(x)))))` with 3x3 stride-1 convolutions, so
/// the block preserves both channel count and spatial extent.
///
/// Zeroing the second normalization's scale (with zero shift) collapses the
/// inner path, reducing the block to the identity.
pub struct ResidualBlock<T: Real> {
    pub conv1: Conv2d<T>,
    pub bn1: BatchNorm<T>,
    pub conv2: Conv2d<T>,
    pub bn2: BatchNorm<T>,
}

impl<T: Real> ResidualBlock<T> {
    pub fn new(channels: usize, rng: &mut impl Rng) -> Self {
        ResidualBlock {
            conv1: Conv2d::new(channels, channels, 3, 1, 1, rng),
            bn1: BatchNorm::new(channels),
            conv2: Conv2d::new(channels, channels, 3, 1, 1, rng),
            bn2: BatchNorm::new(channels),
        }
    }

    pub fn forward(&self, x: &Tensor<T>, mode: NormMode) -> Result<Tensor<T>, LayerError> {
        let inner = self.bn1.forward(&self.conv1.forward(x)?, mode)?.relu();
        let inner = self.bn2.forward(&self.conv2.forward(&inner)?, mode)?;
        Ok(x.add(&inner)?)
    }
}
