//! Least-squares adversarial losses and the L1 reconstruction term.

use super::{Discriminator, ModelError};
use crate::nn::NormMode;
use crate::tensor::{Real, Tensor, TensorError};

/// Mean absolute difference between two same-shaped tensors.
pub fn l1_mean<T: Real>(target: &Tensor<T>, synthetic: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    Ok(target.sub(synthetic)?.abs().mean_all())
}

/// Least-squares discriminator objective from raw scores:
/// `0.5 * (real - 1)^2 + 0.5 * fake^2`.
pub fn d_loss_from_scores<T: Real>(
    real_score: &Tensor<T>,
    fake_score: &Tensor<T>,
) -> Result<Tensor<T>, TensorError> {
    let half = T::from_f64(0.5);
    let real_term = real_score.sub_scalar(T::one()).square().mul_scalar(half);
    let fake_term = fake_score.square().mul_scalar(half);
    real_term.add(&fake_term)
}

/// Generator objective split into graph-connected tensors; `adversarial` and
/// `reconstruction` are the unweighted terms.
pub struct GeneratorLossParts<T: Real> {
    pub total: Tensor<T>,
    pub adversarial: Tensor<T>,
    pub reconstruction: Tensor<T>,
}

/// Least-squares generator objective from a raw fake score plus the weighted
/// reconstruction term: `0.5 * (fake - 1)^2 + lambda * mean|target - syn|`.
pub fn g_loss_from_scores<T: Real>(
    fake_score: &Tensor<T>,
    synthetic: &Tensor<T>,
    target: &Tensor<T>,
    lambda: f64,
) -> Result<GeneratorLossParts<T>, TensorError> {
    let half = T::from_f64(0.5);
    let adversarial = fake_score.sub_scalar(T::one()).square().mul_scalar(half);
    let reconstruction = l1_mean(target, synthetic)?;
    let total = adversarial.add(&reconstruction.mul_scalar(T::from_f64(lambda)))?;
    Ok(GeneratorLossParts {
        total,
        adversarial,
        reconstruction,
    })
}

/// Discriminator loss with recorded scores.
pub struct DiscriminatorLoss<T: Real> {
    pub total: Tensor<T>,
    pub real_score: f64,
    pub fake_score: f64,
}

/// Generator loss with recorded parts.
pub struct GeneratorLoss<T: Real> {
    pub total: Tensor<T>,
    pub adversarial: f64,
    pub reconstruction: f64,
}

/// Scores the real CT and the synthetic one (detached, so generator weights
/// see no gradient from this loss) and forms the least-squares objective.
pub fn discriminator_loss<T: Real>(
    d: &Discriminator<T>,
    real_ct: &Tensor<T>,
    synthetic_ct: &Tensor<T>,
    mode: NormMode,
) -> Result<DiscriminatorLoss<T>, ModelError> {
    let real = d.discriminate(real_ct, mode)?.score;
    let fake = d.discriminate(&synthetic_ct.detach(), mode)?.score;
    let total = d_loss_from_scores(&real, &fake)?;
    Ok(DiscriminatorLoss {
        total,
        real_score: real.item()?.as_f64(),
        fake_score: fake.item()?.as_f64(),
    })
}

/// Scores the (graph-connected) synthetic CT and forms the fused objective
/// `0.5 * (D(syn) - 1)^2 + lambda * mean|ct - syn|`.
pub fn generator_loss<T: Real>(
    d: &Discriminator<T>,
    synthetic_ct: &Tensor<T>,
    real_ct: &Tensor<T>,
    lambda: f64,
    mode: NormMode,
) -> Result<GeneratorLoss<T>, ModelError> {
    let fake = d.discriminate(synthetic_ct, mode)?.score;
    let parts = g_loss_from_scores(&fake, synthetic_ct, real_ct, lambda)?;
    Ok(GeneratorLoss {
        total: parts.total,
        adversarial: parts.adversarial.item()?.as_f64(),
        reconstruction: parts.reconstruction.item()?.as_f64(),
    })
}
