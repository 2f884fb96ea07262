//! MR-to-CT translation networks.
//!
//! Three variants share one encoder/decoder generator:
//!
//! * `attention-gan` — two-pass synthesis. A provisional CT estimate is
//!   scored by the discriminator, a spatial attention map is distilled from
//!   one of its intermediate feature maps, and the generator runs again with
//!   that map weighting its first encoder features.
//! * `gan` — the same generator and discriminator without the attention
//!   pass.
//! * `cnn` — the generator alone, trained with a pure reconstruction loss.

mod attention;
mod discriminator;
mod generator;
mod infer;
mod losses;
mod train;

pub use attention::{extract_attention, generate, AttentionMap, ATTENTION_FLAT_EPS};
pub use discriminator::{Discriminator, DiscriminatorOutput};
pub use generator::Generator;
pub use infer::{synthesize_volume, SynthesisResult};
pub use losses::{
    d_loss_from_scores, discriminator_loss, g_loss_from_scores, generator_loss, l1_mean,
    DiscriminatorLoss, GeneratorLoss, GeneratorLossParts,
};
pub use train::{train, EpochStats, StepLosses, TrainConfig, TrainHistory, Trainer};

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{BatchNorm, Conv2d, ConvTranspose2d, LayerError, ResidualBlock};
use crate::tensor::{ParamSet, Real, Tensor, TensorError};

/// Which translation variant to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    AttentionGan,
    Gan,
    Cnn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::AttentionGan, ModelKind::Gan, ModelKind::Cnn];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::AttentionGan => "attention-gan",
            ModelKind::Gan => "gan",
            ModelKind::Cnn => "cnn",
        }
    }

    /// True when the variant trains a discriminator.
    pub fn adversarial(self) -> bool {
        !matches!(self, ModelKind::Cnn)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, ModelError> {
        match s {
            "attention-gan" => Ok(ModelKind::AttentionGan),
            "gan" => Ok(ModelKind::Gan),
            "cnn" => Ok(ModelKind::Cnn),
            other => Err(ModelError::UnknownKind(other.to_string())),
        }
    }
}

/// Architecture hyperparameters; fully determines both networks' shapes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Input/output height in pixels; must be divisible by 8.
    pub height: usize,
    /// Input/output width in pixels; must be divisible by 8.
    pub width: usize,
    /// Channel count of the first encoder layer; deeper layers scale from
    /// it (64 reproduces the reference architecture).
    pub base_width: usize,
    /// 1-based discriminator layer whose feature map drives the attention
    /// weighting.
    pub attention_layer: usize,
}

impl ModelConfig {
    pub fn new(kind: ModelKind, height: usize, width: usize) -> Self {
        ModelConfig {
            kind,
            height,
            width,
            base_width: 64,
            attention_layer: 3,
        }
    }
}

/// Errors from model construction, synthesis, and training.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("input size {h}x{w} must be divisible by 8 in both axes")]
    SizeNotDivisible { h: usize, w: usize },
    #[error("discriminator needs at least 48x48 inputs, got {h}x{w}")]
    TooSmallForDiscriminator { h: usize, w: usize },
    #[error("base width must be >= 1")]
    ZeroWidth,
    #[error("attention layer {layer} out of range; the discriminator has {available} layers")]
    AttentionLayer { layer: usize, available: usize },
    #[error("attention map shape {got:?} does not match the first encoder feature map {expected:?}")]
    AttentionShape { expected: Vec<usize>, got: Vec<usize> },
    #[error("model kind `{kind}` has no discriminator")]
    MissingDiscriminator { kind: ModelKind },
    #[error("unknown model kind `{0}` (expected attention-gan, gan, or cnn)")]
    UnknownKind(String),
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("batch size {got} is unsupported; training runs with batch size 1")]
    BatchSize { got: usize },
    #[error("snapshot entry `{name}` is not a blob of this model")]
    UnknownBlob { name: String },
    #[error("snapshot is missing blob `{name}`")]
    MissingBlob { name: String },
    #[error("blob `{name}` has {got} values, model expects {expected}")]
    BlobLen {
        name: String,
        expected: usize,
        got: usize,
    },
    #[error("volume is {got_h}x{got_w} but the model was built for {expected_h}x{expected_w}")]
    InputShape {
        expected_h: usize,
        expected_w: usize,
        got_h: usize,
        got_w: usize,
    },
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] crate::checkpoint::CheckpointError),
    #[error(transparent)]
    Phantom(#[from] crate::phantom::PhantomError),
}

/// A generator plus (for adversarial kinds) its discriminator.
pub struct Models<T: Real> {
    pub config: ModelConfig,
    pub generator: Generator<T>,
    pub discriminator: Option<Discriminator<T>>,
}

/// Builds the networks for `cfg`, drawing every weight from a single
/// ChaCha8 stream seeded with `seed` — identical seeds give identical
/// parameters.
pub fn build_models<T: Real>(cfg: &ModelConfig, seed: u64) -> Result<Models<T>, ModelError> {
    if cfg.base_width == 0 {
        return Err(ModelError::ZeroWidth);
    }
    if cfg.height % 8 != 0 || cfg.width % 8 != 0 || cfg.height == 0 || cfg.width == 0 {
        return Err(ModelError::SizeNotDivisible {
            h: cfg.height,
            w: cfg.width,
        });
    }
    if cfg.kind.adversarial() {
        // Six stacked kernel-4 layers eat 48 pixels down to a single cell;
        // anything smaller collapses to an empty map.
        if cfg.height < 48 || cfg.width < 48 {
            return Err(ModelError::TooSmallForDiscriminator {
                h: cfg.height,
                w: cfg.width,
            });
        }
        if !(1..=Discriminator::<T>::LAYERS).contains(&cfg.attention_layer) {
            return Err(ModelError::AttentionLayer {
                layer: cfg.attention_layer,
                available: Discriminator::<T>::LAYERS,
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let generator = Generator::new(cfg.base_width, &mut rng);
    let discriminator = cfg
        .kind
        .adversarial()
        .then(|| Discriminator::new(cfg.base_width, &mut rng));
    Ok(Models {
        config: cfg.clone(),
        generator,
        discriminator,
    })
}

/// Borrowed view of one named state buffer: a trainable tensor or a plain
/// running-statistic vector.
pub(crate) enum BlobRef<'a, T: Real> {
    Param(&'a Tensor<T>),
    State(&'a RefCell<Vec<T>>),
}

pub(crate) fn visit_conv<'a, T: Real>(
    prefix: &str,
    conv: &'a Conv2d<T>,
    f: &mut impl FnMut(String, BlobRef<'a, T>),
) {
    f(format!("{prefix}.weight"), BlobRef::Param(&conv.weight));
    f(format!("{prefix}.bias"), BlobRef::Param(&conv.bias));
}

pub(crate) fn visit_tconv<'a, T: Real>(
    prefix: &str,
    conv: &'a ConvTranspose2d<T>,
    f: &mut impl FnMut(String, BlobRef<'a, T>),
) {
    f(format!("{prefix}.weight"), BlobRef::Param(&conv.weight));
    f(format!("{prefix}.bias"), BlobRef::Param(&conv.bias));
}

pub(crate) fn visit_bn<'a, T: Real>(
    prefix: &str,
    bn: &'a BatchNorm<T>,
    f: &mut impl FnMut(String, BlobRef<'a, T>),
) {
    f(format!("{prefix}.scale"), BlobRef::Param(&bn.scale));
    f(format!("{prefix}.shift"), BlobRef::Param(&bn.shift));
    f(format!("{prefix}.running_mean"), BlobRef::State(&bn.running_mean));
    f(format!("{prefix}.running_var"), BlobRef::State(&bn.running_var));
}

pub(crate) fn visit_resblock<'a, T: Real>(
    prefix: &str,
    block: &'a ResidualBlock<T>,
    f: &mut impl FnMut(String, BlobRef<'a, T>),
) {
    visit_conv(&format!("{prefix}.conv1"), &block.conv1, f);
    visit_bn(&format!("{prefix}.bn1"), &block.bn1, f);
    visit_conv(&format!("{prefix}.conv2"), &block.conv2, f);
    visit_bn(&format!("{prefix}.bn2"), &block.bn2, f);
}

impl<T: Real> Models<T> {
    fn visit_blobs<'a>(&'a self, f: &mut impl FnMut(String, BlobRef<'a, T>)) {
        self.generator.visit_blobs("g", f);
        if let Some(d) = &self.discriminator {
            d.visit_blobs("d", f);
        }
    }

    /// Trainable generator parameters in a stable declaration order.
    pub fn generator_params(&self) -> ParamSet<T> {
        let mut set = ParamSet::new();
        self.generator.visit_blobs("g", &mut |name, blob| {
            if let BlobRef::Param(t) = blob {
                set.push(name, t.clone());
            }
        });
        set
    }

    /// Trainable discriminator parameters, when the variant has one.
    pub fn discriminator_params(&self) -> Option<ParamSet<T>> {
        self.discriminator.as_ref().map(|d| {
            let mut set = ParamSet::new();
            d.visit_blobs("d", &mut |name, blob| {
                if let BlobRef::Param(t) = blob {
                    set.push(name, t.clone());
                }
            });
            set
        })
    }

    /// Every named state buffer (parameters and running statistics) in a
    /// stable order, copied out.
    pub fn export_blobs(&self) -> Vec<(String, Vec<T>)> {
        let mut out = Vec::new();
        self.visit_blobs(&mut |name, blob| {
            let values = match blob {
                BlobRef::Param(t) => t.to_vec(),
                BlobRef::State(cell) => cell.borrow().clone(),
            };
            out.push((name, values));
        });
        out
    }

    /// Overwrites every state buffer from `blobs`. The set of names must
    /// match the model exactly and every length must agree; nothing is
    /// written until all checks pass.
    pub fn import_blobs(&self, blobs: &HashMap<String, Vec<T>>) -> Result<(), ModelError> {
        let mut expected = 0usize;
        let mut check: Result<(), ModelError> = Ok(());
        self.visit_blobs(&mut |name, blob| {
            expected += 1;
            if check.is_err() {
                return;
            }
            let want = match &blob {
                BlobRef::Param(t) => t.numel(),
                BlobRef::State(cell) => cell.borrow().len(),
            };
            match blobs.get(&name) {
                None => check = Err(ModelError::MissingBlob { name }),
                Some(values) if values.len() != want => {
                    check = Err(ModelError::BlobLen {
                        name,
                        expected: want,
                        got: values.len(),
                    })
                }
                Some(_) => {}
            }
        });
        check?;
        if blobs.len() != expected {
            // Some supplied name is not part of this model; find one for the
            // error message.
            let mut known = std::collections::HashSet::new();
            self.visit_blobs(&mut |name, _| {
                known.insert(name);
            });
            let unknown = blobs
                .keys()
                .find(|k| !known.contains(*k))
                .cloned()
                .unwrap_or_default();
            return Err(ModelError::UnknownBlob { name: unknown });
        }

        self.visit_blobs(&mut |name, blob| {
            let values = &blobs[&name];
            match blob {
                BlobRef::Param(t) => t.values_mut().copy_from_slice(values),
                BlobRef::State(cell) => cell.borrow_mut().copy_from_slice(values),
            }
        });
        Ok(())
    }
}
