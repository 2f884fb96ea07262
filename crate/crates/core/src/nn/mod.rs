//! Neural-network building blocks on top of the tensor graph.
//!
//! Everything here is shape-checked up front and differentiable end to end:
//! convolutions (direct and transposed) via im2col + GEMM, batch
//! normalization with gradients flowing through the batch statistics,
//! activations, corner-aligned bilinear upsampling, and the residual block
//! used by the translation generator.

mod conv;
mod init;
mod norm;
mod resblock;
mod upsample;

pub use conv::{conv2d, conv_transpose2d, Conv2d, ConvTranspose2d};
pub use init::normal_init;
pub use norm::{batch_norm, BatchNorm, NormMode};
pub use resblock::ResidualBlock;
pub use upsample::bilinear_upsample;

use thiserror::Error;

use crate::tensor::{Real, Tensor, TensorError};

/// Errors from layer construction and forward passes.
#[derive(Debug, Error)]
pub enum LayerError {
    #[error("{op}: input has rank {got}, expected rank {expected}")]
    Rank {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{op}: input has {got} channels, expected {expected}")]
    Channels {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{op}: parameter `{name}` has {got} elements, expected {expected}")]
    ParamLen {
        op: &'static str,
        name: &'static str,
        expected: usize,
        got: usize,
    },
    #[error(
        "{op}: output would be {out_h}x{out_w}; input {in_h}x{in_w} is too small \
         for kernel {kernel} / stride {stride} / padding {padding}"
    )]
    OutputTooSmall {
        op: &'static str,
        in_h: usize,
        in_w: usize,
        out_h: isize,
        out_w: isize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    #[error("bilinear upsample target {to_h}x{to_w} is smaller than source {from_h}x{from_w}")]
    UpsampleTarget {
        from_h: usize,
        from_w: usize,
        to_h: usize,
        to_w: usize,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Pointwise nonlinearity selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    /// Applies the activation elementwise, preserving shape.
    pub fn apply<T: Real>(self, x: &Tensor<T>) -> Tensor<T> {
        match self {
            Activation::Relu => x.relu(),
            Activation::Tanh => x.tanh(),
        }
    }
}

pub(crate) fn expect_rank<T: Real>(op: &'static str, t: &Tensor<T>, rank: usize) -> Result<(), LayerError> {
    if t.rank() != rank {
        return Err(LayerError::Rank {
            op,
            expected: rank,
            got: t.rank(),
        });
    }
    Ok(())
}
