//! Finite-difference validation of analytic gradients.

use super::{backward, Real, Tensor, TensorError};

/// Outcome of a finite-difference sweep.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    /// Largest relative error among the compared elements.
    pub max_rel_err: f64,
    /// Number of elements compared.
    pub checked: usize,
    /// Elements skipped because the objective is locally non-smooth there
    /// (the two one-sided difference quotients disagree).
    pub excluded: usize,
}

/// Compares analytic gradients of `objective` against central finite
/// differences, element by element, over every input tensor.
///
/// All inputs must require gradients. The objective must evaluate to a
/// scalar and must be a pure function of the input values. Elements where
/// the forward and backward one-sided quotients disagree markedly are
/// counted in `excluded` rather than compared, which skips kinks of
/// piecewise functions (|x| at 0, ReLU at 0) where a two-sided quotient is
/// meaningless.
pub fn grad_check<F>(objective: F, inputs: &[Tensor<f64>], eps: f64) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&[Tensor<f64>]) -> Tensor<f64>,
{
    for (index, input) in inputs.iter().enumerate() {
        if !input.requires_grad() {
            return Err(TensorError::InputWithoutGrad { index });
        }
    }

    let base = objective(inputs);
    if base.numel() != 1 {
        return Err(TensorError::NonScalarObjective {
            shape: base.shape().to_vec(),
        });
    }
    let y0 = base.item()?.as_f64();
    let grads = backward(&base)?;

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        checked: 0,
        excluded: 0,
    };

    for (index, input) in inputs.iter().enumerate() {
        let analytic = grads
            .get(input)
            .cloned()
            .unwrap_or_else(|| vec![0.0; input.numel()]);
        let baseline = input.to_vec();
        for j in 0..baseline.len() {
            let y_plus = eval_perturbed(&objective, inputs, index, j, baseline[j] + eps)?;
            let y_minus = eval_perturbed(&objective, inputs, index, j, baseline[j] - eps)?;

            let forward = (y_plus - y0) / eps;
            let backward_q = (y0 - y_minus) / eps;
            let smooth_scale = forward.abs().max(backward_q.abs()).max(1.0);
            if (forward - backward_q).abs() > 1e-3 * smooth_scale {
                report.excluded += 1;
                continue;
            }

            let numeric = (y_plus - y_minus) / (2.0 * eps);
            let a = analytic[j];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            let rel = (a - numeric).abs() / denom;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

fn eval_perturbed<F>(
    objective: &F,
    inputs: &[Tensor<f64>],
    index: usize,
    element: usize,
    value: f64,
) -> Result<f64, TensorError>
where
    F: Fn(&[Tensor<f64>]) -> Tensor<f64>,
{
    let mut probe: Vec<Tensor<f64>> = Vec::with_capacity(inputs.len());
    for (i, input) in inputs.iter().enumerate() {
        if i == index {
            let mut values = input.to_vec();
            values[element] = value;
            // The probe point needs no graph; plain constants keep the
            // evaluation cheap.
            probe.push(Tensor::new(input.shape(), values, false)?);
        } else {
            probe.push(input.detach());
        }
    }
    let out = objective(&probe);
    Ok(out.item()?.as_f64())
}
