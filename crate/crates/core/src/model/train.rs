//! The alternating training loop.
//!
//! Every step processes one MR/CT slice pair. Adversarial variants first
//! update the discriminator on the least-squares real/fake objective (the
//! synthesized CT detached), then re-score the same synthesized CT with the
//! freshly updated discriminator and take a generator step on the combined
//! adversarial + weighted-L1 objective. The reconstruction-only variant
//! takes a single generator step on plain L1. Slice order is reshuffled
//! every epoch from a seeded stream, so whole runs are reproducible.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::attention::generate;
use super::losses::{discriminator_loss, generator_loss, l1_mean};
use super::{build_models, ModelConfig, ModelError, Models};
use crate::checkpoint::{save_checkpoint, Manifest, OptimizerManifest, OptimizerStates};
use crate::nn::NormMode;
use crate::phantom::SlicePair;
use crate::tensor::{backward, AdamHyper, AdamState, ParamSet, Real, Tensor};

/// Decorrelates the shuffle stream from the weight-init stream, which is
/// seeded with the raw run seed.
const SHUFFLE_SEED_OFFSET: u64 = 0x9E37_79B9_7F4A_7C15;

/// Everything a training run needs besides the dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub epochs: usize,
    /// Slice pairs per update; the loop only supports 1.
    pub batch_size: usize,
    pub lr: f64,
    /// Reconstruction weight in the generator objective.
    pub lambda: f64,
    pub seed: u64,
    /// Save a checkpoint every this many epochs (in addition to whatever
    /// the caller does with the final state).
    pub checkpoint_every: Option<usize>,
}

impl TrainConfig {
    pub fn new(model: ModelConfig) -> Self {
        TrainConfig {
            model,
            epochs: 200,
            batch_size: 1,
            lr: 2e-4,
            lambda: 10.0,
            seed: 0,
            checkpoint_every: None,
        }
    }

    pub fn hyper(&self) -> AdamHyper {
        AdamHyper {
            lr: self.lr,
            ..AdamHyper::default()
        }
    }
}

/// Loss values of one update step. The discriminator and adversarial parts
/// are absent for the reconstruction-only variant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub d_loss: Option<f64>,
    pub adversarial: Option<f64>,
    pub reconstruction: f64,
    /// Full generator objective: adversarial + lambda * reconstruction,
    /// or plain reconstruction without a discriminator.
    pub total: f64,
}

/// Per-epoch mean losses plus wall-clock duration.
#[derive(Debug, Clone, Copy)]
pub struct EpochStats {
    pub d_loss: Option<f64>,
    pub adversarial: Option<f64>,
    pub reconstruction: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

/// Networks plus optimizer state, stepping one slice pair at a time.
pub struct Trainer<T: Real> {
    pub models: Models<T>,
    g_params: ParamSet<T>,
    d_params: Option<ParamSet<T>>,
    opt_g: AdamState,
    opt_d: Option<AdamState>,
    lambda: f64,
}

fn scalar<T: Real>(t: &Tensor<T>) -> f64 {
    t.to_vec()[0].as_f64()
}

impl<T: Real> Trainer<T> {
    pub fn new(models: Models<T>, hyper: AdamHyper, lambda: f64) -> Self {
        let g_params = models.generator_params();
        let d_params = models.discriminator_params();
        let opt_d = d_params.as_ref().map(|_| AdamState::new(hyper));
        Trainer {
            models,
            g_params,
            d_params,
            opt_g: AdamState::new(hyper),
            opt_d,
            lambda,
        }
    }

    pub fn generator_steps(&self) -> u64 {
        self.opt_g.step_count()
    }

    pub fn discriminator_steps(&self) -> Option<u64> {
        self.opt_d.as_ref().map(|o| o.step_count())
    }

    /// One update on a single `[1,1,H,W]` pair (both already normalized).
    pub fn step(&mut self, mr: &Tensor<T>, ct: &Tensor<T>) -> Result<StepLosses, ModelError> {
        let (synthetic, _) = generate(&self.models, mr, NormMode::Train)?;

        let Some(d) = self.models.discriminator.as_ref() else {
            let loss = l1_mean(ct, &synthetic)?;
            let grads = backward(&loss)?;
            self.opt_g.step(&self.g_params, &grads)?;
            self.g_params.zero_grads();
            let value = scalar(&loss);
            return Ok(StepLosses {
                d_loss: None,
                adversarial: None,
                reconstruction: value,
                total: value,
            });
        };
        let d_params = self.d_params.as_ref().expect("adversarial model has d params");
        let opt_d = self.opt_d.as_mut().expect("adversarial model has d optimizer");

        // Discriminator first: the synthesized CT is detached inside the
        // loss, so only discriminator weights receive gradient.
        let d_loss = discriminator_loss(d, ct, &synthetic, NormMode::Train)?;
        let grads = backward(&d_loss.total)?;
        opt_d.step(d_params, &grads)?;
        d_params.zero_grads();

        // Generator second, scored by the just-updated discriminator. That
        // forward pass is recorded, so this backward also reaches
        // discriminator leaves; drop those gradients with the rest.
        let g_loss = generator_loss(d, &synthetic, ct, self.lambda, NormMode::Train)?;
        let grads = backward(&g_loss.total)?;
        self.opt_g.step(&self.g_params, &grads)?;
        self.g_params.zero_grads();
        d_params.zero_grads();

        Ok(StepLosses {
            d_loss: Some(scalar(&d_loss.total)),
            adversarial: Some(g_loss.adversarial),
            reconstruction: g_loss.reconstruction,
            total: scalar(&g_loss.total),
        })
    }

    /// Manifest describing this trainer after `epoch` completed epochs.
    pub fn manifest(&self, cfg: &TrainConfig, epoch: usize) -> Manifest {
        let optimizer = OptimizerManifest::new(
            self.opt_g.hyper(),
            self.opt_g.step_count(),
            self.opt_d.as_ref().map_or(0, |o| o.step_count()),
        );
        Manifest::new(&cfg.model, epoch, cfg.seed, cfg.lambda, optimizer)
    }

    /// Writes networks, optimizer moments, and the manifest to `path`.
    pub fn save(&self, manifest: &Manifest, path: &Path) -> Result<(), ModelError> {
        let states = OptimizerStates {
            generator: &self.opt_g,
            discriminator: self.opt_d.as_ref(),
        };
        save_checkpoint(&self.models, Some(states), manifest, path)?;
        Ok(())
    }
}

/// Runs the full loop: fresh seeded networks, `cfg.epochs` passes over
/// `dataset` in seeded shuffled order, per-epoch mean losses recorded, and
/// (optionally) a checkpoint written into `checkpoint_dir` every
/// `cfg.checkpoint_every` epochs. `on_epoch` fires after each epoch with
/// its index and stats.
pub fn train(
    cfg: &TrainConfig,
    dataset: &[SlicePair],
    checkpoint_dir: Option<&Path>,
    mut on_epoch: impl FnMut(usize, &EpochStats),
) -> Result<(Trainer<f32>, TrainHistory), ModelError> {
    if dataset.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    if cfg.batch_size != 1 {
        return Err(ModelError::BatchSize {
            got: cfg.batch_size,
        });
    }
    let models = build_models::<f32>(&cfg.model, cfg.seed)?;
    let mut trainer = Trainer::new(models, cfg.hyper(), cfg.lambda);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(SHUFFLE_SEED_OFFSET));

    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut d_sum = 0.0;
        let mut adv_sum = 0.0;
        let mut rec_sum = 0.0;
        for &i in &order {
            let pair = &dataset[i];
            let losses = trainer.step(&pair.mr, &pair.ct)?;
            d_sum += losses.d_loss.unwrap_or(0.0);
            adv_sum += losses.adversarial.unwrap_or(0.0);
            rec_sum += losses.reconstruction;
        }
        let n = dataset.len() as f64;
        let adversarial = cfg.model.kind.adversarial();
        let stats = EpochStats {
            d_loss: adversarial.then(|| d_sum / n),
            adversarial: adversarial.then(|| adv_sum / n),
            reconstruction: rec_sum / n,
            seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(epoch, &stats);
        history.epochs.push(stats);

        if let (Some(every), Some(dir)) = (cfg.checkpoint_every, checkpoint_dir) {
            if every > 0 && (epoch + 1) % every == 0 {
                let manifest = trainer.manifest(cfg, epoch + 1);
                let path = dir.join(format!("epoch_{:04}.ckpt", epoch + 1));
                trainer.save(&manifest, &path)?;
            }
        }
    }
    Ok((trainer, history))
}
