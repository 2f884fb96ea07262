//! Batch normalization over `[n, c, h, w]` feature maps.
//!
//! Statistics are taken per channel across the batch and both spatial axes.
//! With the batch size of 1 used throughout training this degenerates to
//! per-channel spatial normalization, which is exactly the behaviour the
//! translation networks are tuned for. Training mode normalizes by the
//! current batch statistics (gradients flow through them) and maintains
//! exponential running estimates; evaluation mode normalizes by the running
//! estimates.

use std::cell::RefCell;

use super::{expect_rank, LayerError};
use crate::tensor::{grad_enabled, Node, Real, Tensor};

/// Whether batch statistics (train) or running statistics (eval) normalize
/// the input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    Train,
    Eval,
}

/// Learnable affine parameters plus running statistics for one channel axis.
pub struct BatchNorm<T: Real> {
    /// Per-channel multiplier, initialized to 1.
    pub scale: Tensor<T>,
    /// Per-channel offset, initialized to 0.
    pub shift: Tensor<T>,
    /// Exponential estimate of the per-channel mean (eval-mode center).
    pub running_mean: RefCell<Vec<T>>,
    /// Exponential estimate of the per-channel variance (eval-mode spread);
    /// never negative.
    pub running_var: RefCell<Vec<T>>,
    /// Fraction of the batch statistic blended into the running estimate at
    /// each training step.
    pub momentum: f64,
    pub epsilon: f64,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            scale: Tensor::new(&[channels], vec![T::one(); channels], true).expect("scale shape"),
            shift: Tensor::new(&[channels], vec![T::zero(); channels], true).expect("shift shape"),
            running_mean: RefCell::new(vec![T::zero(); channels]),
            running_var: RefCell::new(vec![T::one(); channels]),
            momentum: 0.1,
            epsilon: 1e-5,
        }
    }

    pub fn channels(&self) -> usize {
        self.scale.numel()
    }

    pub fn forward(&self, x: &Tensor<T>, mode: NormMode) -> Result<Tensor<T>, LayerError> {
        batch_norm(x, self, mode)
    }
}

/// Applies batch normalization; see [`BatchNorm`].
pub fn batch_norm<T: Real>(
    input: &Tensor<T>,
    bn: &BatchNorm<T>,
    mode: NormMode,
) -> Result<Tensor<T>, LayerError> {
    const OP: &str = "batch_norm";
    expect_rank(OP, input, 4)?;
    let shape = input.shape().to_vec();
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    if c != bn.channels() {
        return Err(LayerError::Channels {
            op: OP,
            expected: bn.channels(),
            got: c,
        });
    }

    let plane = h * w;
    let per_channel = n * plane;
    let x = input.to_vec();

    // Per-channel center/spread used for this pass.
    let (mean, var) = match mode {
        NormMode::Train => {
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for ci in 0..c {
                let mut acc = T::zero();
                for ni in 0..n {
                    let base = (ni * c + ci) * plane;
                    for p in 0..plane {
                        acc = acc + x[base + p];
                    }
                }
                let mu = acc / T::from_f64(per_channel as f64);
                let mut acc2 = T::zero();
                for ni in 0..n {
                    let base = (ni * c + ci) * plane;
                    for p in 0..plane {
                        let d = x[base + p] - mu;
                        acc2 = acc2 + d * d;
                    }
                }
                mean[ci] = mu;
                var[ci] = acc2 / T::from_f64(per_channel as f64);
            }
            // Blend into the running estimates.
            {
                let mut rm = bn.running_mean.borrow_mut();
                let mut rv = bn.running_var.borrow_mut();
                let momentum = T::from_f64(bn.momentum);
                let keep = T::one() - momentum;
                for ci in 0..c {
                    rm[ci] = keep * rm[ci] + momentum * mean[ci];
                    rv[ci] = keep * rv[ci] + momentum * var[ci];
                }
            }
            (mean, var)
        }
        NormMode::Eval => (bn.running_mean.borrow().clone(), bn.running_var.borrow().clone()),
    };

    let eps = T::from_f64(bn.epsilon);
    let inv_sigma: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();

    let scale = bn.scale.to_vec();
    let shift = bn.shift.to_vec();
    let mut values = vec![T::zero(); x.len()];
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * plane;
            for p in 0..plane {
                let xhat = (x[base + p] - mean[ci]) * inv_sigma[ci];
                values[base + p] = scale[ci] * xhat + shift[ci];
            }
        }
    }

    if !grad_enabled() || !(input.needs_grad() || bn.scale.needs_grad() || bn.shift.needs_grad()) {
        return Ok(Tensor::new(&shape, values, false)?);
    }

    let parents = vec![input.clone(), bn.scale.clone(), bn.shift.clone()];
    let input_c = input.clone();
    let scale_c = bn.scale.clone();
    let shift_c = bn.shift.clone();
    let train_mode = mode == NormMode::Train;
    let backward: crate::tensor::BackwardFn<T> = Box::new(move |grad: &[T]| {
        let x = input_c.values();
        let scale = scale_c.values();
        let m = T::from_f64(per_channel as f64);

        let need_x = input_c.needs_grad();
        let need_scale = scale_c.needs_grad();
        let need_shift = shift_c.needs_grad();

        let mut dx = need_x.then(|| vec![T::zero(); x.len()]);
        let mut dscale = need_scale.then(|| vec![T::zero(); c]);
        let mut dshift = need_shift.then(|| vec![T::zero(); c]);

        for ci in 0..c {
            // Channel-wise sums of g and g * xhat feed every gradient.
            let mut sum_g = T::zero();
            let mut sum_gx = T::zero();
            for ni in 0..n {
                let base = (ni * c + ci) * plane;
                for p in 0..plane {
                    let g = grad[base + p];
                    let xhat = (x[base + p] - mean[ci]) * inv_sigma[ci];
                    sum_g = sum_g + g;
                    sum_gx = sum_gx + g * xhat;
                }
            }
            if let Some(ds) = dscale.as_mut() {
                ds[ci] = sum_gx;
            }
            if let Some(db) = dshift.as_mut() {
                db[ci] = sum_g;
            }
            if let Some(dx) = dx.as_mut() {
                let k = scale[ci] * inv_sigma[ci];
                if train_mode {
                    // Batch statistics depend on x, so the mean and variance
                    // terms feed back into every element of the channel.
                    let mean_g = sum_g / m;
                    let mean_gx = sum_gx / m;
                    for ni in 0..n {
                        let base = (ni * c + ci) * plane;
                        for p in 0..plane {
                            let g = grad[base + p];
                            let xhat = (x[base + p] - mean[ci]) * inv_sigma[ci];
                            dx[base + p] = k * (g - mean_g - xhat * mean_gx);
                        }
                    }
                } else {
                    // Running statistics are constants.
                    for ni in 0..n {
                        let base = (ni * c + ci) * plane;
                        for p in 0..plane {
                            dx[base + p] = k * grad[base + p];
                        }
                    }
                }
            }
        }
        vec![dx, dscale, dshift]
    });

    Ok(Tensor::from_op(
        shape,
        values,
        Node {
            parents,
            backward,
            op: OP,
        },
    ))
}
