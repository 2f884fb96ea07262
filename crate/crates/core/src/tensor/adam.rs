//! ADAM optimizer with bias-corrected moment estimates.

use std::collections::HashMap;

use super::{GradMap, ParamSet, Real, TensorError};

/// Optimizer hyperparameters.
///
/// The defaults follow the training recipe used throughout this project:
/// a low first-moment decay (`beta1 = 0.5`) stabilizes adversarial updates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Moment vectors of one parameter, keyed by the parameter's name so they
/// survive process restarts (tensor ids do not).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamMoments {
    pub name: String,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// Per-parameter first/second moment state plus the shared step counter.
///
/// Moments are kept in `f64` regardless of the parameter dtype so the update
/// arithmetic is identical in training (`f32`) and checking (`f64`) builds.
pub struct AdamState {
    hyper: AdamHyper,
    step: u64,
    slots: HashMap<u64, Moments>,
}

impl AdamState {
    pub fn new(hyper: AdamHyper) -> Self {
        AdamState {
            hyper,
            step: 0,
            slots: HashMap::new(),
        }
    }

    pub fn hyper(&self) -> AdamHyper {
        self.hyper
    }

    /// Number of completed update steps.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one ADAM update in place to every parameter in `params`.
    ///
    /// Errors (without touching any parameter) when a parameter is missing
    /// from `grads`, naming the parameter.
    pub fn step<T: Real>(&mut self, params: &ParamSet<T>, grads: &GradMap<T>) -> Result<(), TensorError> {
        for (name, tensor) in params.iter() {
            if grads.get(tensor).is_none() {
                return Err(TensorError::MissingGrad {
                    name: name.to_string(),
                });
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let AdamHyper {
            lr,
            beta1,
            beta2,
            epsilon,
        } = self.hyper;
        let m_corr = 1.0 - beta1.powi(t);
        let v_corr = 1.0 - beta2.powi(t);

        for (_, tensor) in params.iter() {
            let grad = grads.get(tensor).expect("presence checked above");
            let slot = self.slots.entry(tensor.id()).or_insert_with(|| Moments {
                m: vec![0.0; tensor.numel()],
                v: vec![0.0; tensor.numel()],
            });
            let mut values = tensor.values_mut();
            for i in 0..values.len() {
                let g = grad[i].as_f64();
                slot.m[i] = beta1 * slot.m[i] + (1.0 - beta1) * g;
                slot.v[i] = beta2 * slot.v[i] + (1.0 - beta2) * g * g;
                let m_hat = slot.m[i] / m_corr;
                let v_hat = slot.v[i] / v_corr;
                let delta = lr * m_hat / (v_hat.sqrt() + epsilon);
                values[i] = T::from_f64(values[i].as_f64() - delta);
            }
        }
        Ok(())
    }

    /// Copies out the moment vectors of every parameter in `params`, in set
    /// order. Parameters that have never been stepped yield zeros (their
    /// true initial moments).
    pub fn snapshot<T: Real>(&self, params: &ParamSet<T>) -> Vec<ParamMoments> {
        params
            .iter()
            .map(|(name, tensor)| match self.slots.get(&tensor.id()) {
                Some(slot) => ParamMoments {
                    name: name.to_string(),
                    m: slot.m.clone(),
                    v: slot.v.clone(),
                },
                None => ParamMoments {
                    name: name.to_string(),
                    m: vec![0.0; tensor.numel()],
                    v: vec![0.0; tensor.numel()],
                },
            })
            .collect()
    }

    /// Replaces all moment state with `moments` (re-keyed onto the
    /// same-named parameters of `params`) and sets the step counter.
    ///
    /// Every parameter must be covered exactly once with matching lengths;
    /// nothing is modified on error.
    pub fn restore<T: Real>(
        &mut self,
        params: &ParamSet<T>,
        step: u64,
        moments: &[ParamMoments],
    ) -> Result<(), TensorError> {
        let by_name: HashMap<&str, &ParamMoments> =
            moments.iter().map(|pm| (pm.name.as_str(), pm)).collect();
        if by_name.len() != moments.len() {
            let mut seen = std::collections::HashSet::new();
            let dup = moments
                .iter()
                .find(|pm| !seen.insert(pm.name.as_str()))
                .expect("duplicate exists");
            return Err(TensorError::UnknownMoment {
                name: dup.name.clone(),
            });
        }
        for (name, tensor) in params.iter() {
            let pm = by_name.get(name).ok_or_else(|| TensorError::MissingMoment {
                name: name.to_string(),
            })?;
            if pm.m.len() != tensor.numel() || pm.v.len() != tensor.numel() {
                return Err(TensorError::MomentLen {
                    name: name.to_string(),
                    expected: tensor.numel(),
                    got: if pm.m.len() != tensor.numel() {
                        pm.m.len()
                    } else {
                        pm.v.len()
                    },
                });
            }
        }
        if let Some(stranger) = moments
            .iter()
            .find(|pm| params.iter().all(|(name, _)| name != pm.name))
        {
            return Err(TensorError::UnknownMoment {
                name: stranger.name.clone(),
            });
        }

        self.slots.clear();
        for (name, tensor) in params.iter() {
            let pm = by_name[name];
            self.slots.insert(
                tensor.id(),
                Moments {
                    m: pm.m.clone(),
                    v: pm.v.clone(),
                },
            );
        }
        self.step = step;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{backward, Tensor};

    fn single_param(value: f64) -> (ParamSet<f64>, Tensor<f64>) {
        let p = Tensor::new(&[1], vec![value], true).unwrap();
        let mut set = ParamSet::new();
        set.push("p", p.clone());
        (set, p)
    }

    #[test]
    fn first_step_moves_by_roughly_the_learning_rate() {
        // loss = p^2 at p = 1: bias correction makes the first update
        // lr * g / (|g| + eps), i.e. almost exactly lr in magnitude.
        let (params, p) = single_param(1.0);
        let mut opt = AdamState::new(AdamHyper {
            lr: 0.1,
            ..AdamHyper::default()
        });
        let loss = p.square().sum_all();
        let grads = backward(&loss).unwrap();
        opt.step(&params, &grads).unwrap();
        let moved = 1.0 - p.item().unwrap();
        assert!((moved - 0.1).abs() < 1e-8, "moved {moved}");
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn update_matches_hand_rolled_adam_for_two_steps() {
        let (params, p) = single_param(0.5);
        let hyper = AdamHyper::default();
        let mut opt = AdamState::new(hyper);

        // Reference implementation, scalar case.
        let mut reference = 0.5f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for t in 1..=2 {
            let loss = p.square().sum_all();
            let grads = backward(&loss).unwrap();
            let g_vec = grads.get(&p).unwrap().clone();
            opt.step(&params, &grads).unwrap();
            p.zero_grad();

            let g = g_vec[0];
            m = hyper.beta1 * m + (1.0 - hyper.beta1) * g;
            v = hyper.beta2 * v + (1.0 - hyper.beta2) * g * g;
            let m_hat = m / (1.0 - hyper.beta1.powi(t));
            let v_hat = v / (1.0 - hyper.beta2.powi(t));
            reference -= hyper.lr * m_hat / (v_hat.sqrt() + hyper.epsilon);
            assert!(
                (p.item().unwrap() - reference).abs() < 1e-12,
                "step {t}: {} vs {}",
                p.item().unwrap(),
                reference
            );
        }
    }

    #[test]
    fn missing_gradient_names_the_parameter() {
        let (mut params, p) = single_param(1.0);
        let stranger = Tensor::new(&[1], vec![2.0], true).unwrap();
        params.push("stranger", stranger);
        let mut opt = AdamState::new(AdamHyper::default());
        let loss = p.square().sum_all();
        let grads = backward(&loss).unwrap();
        let before = p.item().unwrap();
        let err = opt.step(&params, &grads).unwrap_err();
        assert!(err.to_string().contains("stranger"), "got: {err}");
        // The failed step must not have partially applied.
        assert_eq!(p.item().unwrap(), before);
        assert_eq!(opt.step_count(), 0);
    }

    #[test]
    fn snapshot_restore_resumes_identically() {
        // Two optimizers over the same trajectory: one runs 4 steps straight,
        // the other runs 2, snapshots, restores into a fresh state, runs 2
        // more. The parameter values must agree to the last bit.
        let run = |split: bool| -> f64 {
            let (params, p) = single_param(1.0);
            let mut opt = AdamState::new(AdamHyper::default());
            for t in 0..4 {
                if split && t == 2 {
                    let saved = opt.snapshot(&params);
                    let step = opt.step_count();
                    opt = AdamState::new(AdamHyper::default());
                    opt.restore(&params, step, &saved).unwrap();
                }
                let loss = p.square().sum_all();
                let grads = backward(&loss).unwrap();
                opt.step(&params, &grads).unwrap();
                p.zero_grad();
            }
            p.item().unwrap()
        };
        assert_eq!(run(false), run(true));
    }

    #[test]
    fn restore_rejects_missing_extra_and_misshapen_moments() {
        let (params, _) = single_param(1.0);
        let mut opt = AdamState::new(AdamHyper::default());
        let good = opt.snapshot(&params);

        assert!(matches!(
            opt.restore(&params, 1, &[]),
            Err(TensorError::MissingMoment { .. })
        ));

        let mut extra = good.clone();
        extra.push(ParamMoments {
            name: "ghost".into(),
            m: vec![0.0],
            v: vec![0.0],
        });
        assert!(matches!(
            opt.restore(&params, 1, &extra),
            Err(TensorError::UnknownMoment { .. })
        ));

        let mut misshapen = good.clone();
        misshapen[0].v = vec![0.0, 0.0];
        assert!(matches!(
            opt.restore(&params, 1, &misshapen),
            Err(TensorError::MomentLen { expected: 1, got: 2, .. })
        ));

        // The failed restores left the state untouched.
        assert_eq!(opt.step_count(), 0);
        opt.restore(&params, 5, &good).unwrap();
        assert_eq!(opt.step_count(), 5);
    }

    #[test]
    fn moments_persist_per_parameter() {
        let (params, p) = single_param(1.0);
        let mut opt = AdamState::new(AdamHyper::default());
        for _ in 0..3 {
            let loss = p.square().sum_all();
            let grads = backward(&loss).unwrap();
            opt.step(&params, &grads).unwrap();
            p.zero_grad();
        }
        assert_eq!(opt.step_count(), 3);
        // Constant positive gradients keep pushing the value down.
        assert!(p.item().unwrap() < 1.0 - 2.5 * opt.hyper().lr);
    }
}
