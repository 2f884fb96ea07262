//! Binary model snapshots.
//!
//! Layout (all integers little-endian): magic `AGCK`, u32 format version,
//! u32 entry count, then per entry a u16 name length, the UTF-8 name, a u8
//! dtype code (0 = f32, 1 = u8), a u8 rank, rank u32 dims, and the raw
//! payload. The first entry is always `__manifest__`, a u8 blob holding the
//! JSON [`Manifest`]; the model's named state buffers follow as f32 vectors,
//! then (optionally) the optimizer moment vectors as `opt.g.<param>.m`,
//! `opt.g.<param>.v`, and likewise under `opt.d.`.
//!
//! Everything is written deterministically — same model state, same bytes —
//! so equality of checkpoint files is a meaningful test.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{build_models, ModelConfig, ModelError, Models};
use crate::tensor::{AdamHyper, AdamState, ParamMoments, ParamSet, Real};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"AGCK";
pub const CHECKPOINT_VERSION: u32 = 1;

const MANIFEST_ENTRY: &str = "__manifest__";
const OPTIMIZER_PREFIX: &str = "opt.";
const DTYPE_F32: u8 = 0;
const DTYPE_U8: u8 = 1;

/// Errors reading or writing checkpoint files.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic {got:?}; not a checkpoint file")]
    BadMagic { got: [u8; 4] },
    #[error("unsupported checkpoint format version {got}; this build reads version {CHECKPOINT_VERSION}")]
    Version { got: u32 },
    #[error("file truncated while reading {context}")]
    Truncated { context: &'static str },
    #[error("blob length mismatch: entry `{name}` declares {expected} payload bytes but only {got} remain")]
    BlobLength {
        name: String,
        expected: usize,
        got: usize,
    },
    #[error("entry name is not valid UTF-8")]
    Name(#[from] std::string::FromUtf8Error),
    #[error("entry `{name}` has unsupported dtype code {code}")]
    Dtype { name: String, code: u8 },
    #[error("duplicate entry `{name}`")]
    Duplicate { name: String },
    #[error("{extra} trailing bytes after the last entry")]
    TrailingBytes { extra: usize },
    #[error("first entry must be `{MANIFEST_ENTRY}`, found `{found}`")]
    MissingManifest { found: String },
    #[error("manifest does not parse: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Optimizer hyperparameters and progress, as recorded in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerManifest {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub generator_steps: u64,
    /// Zero for the reconstruction-only variant.
    pub discriminator_steps: u64,
}

impl OptimizerManifest {
    pub fn new(hyper: AdamHyper, generator_steps: u64, discriminator_steps: u64) -> Self {
        OptimizerManifest {
            learning_rate: hyper.lr,
            beta1: hyper.beta1,
            beta2: hyper.beta2,
            epsilon: hyper.epsilon,
            generator_steps,
            discriminator_steps,
        }
    }

    pub fn hyper(&self) -> AdamHyper {
        AdamHyper {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

/// Run metadata stored as the leading JSON entry: everything needed to
/// rebuild the networks and identify how far training got.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub model: ModelConfig,
    /// Completed training epochs when this snapshot was taken.
    pub epoch: usize,
    pub seed: u64,
    /// Reconstruction weight in the generator objective.
    pub lambda: f64,
    pub optimizer: OptimizerManifest,
}

impl Manifest {
    pub fn new(
        model: &ModelConfig,
        epoch: usize,
        seed: u64,
        lambda: f64,
        optimizer: OptimizerManifest,
    ) -> Self {
        Manifest {
            format_version: CHECKPOINT_VERSION,
            model: model.clone(),
            epoch,
            seed,
            lambda,
            optimizer,
        }
    }
}

/// Optimizer states to embed alongside the model, generator first.
pub struct OptimizerStates<'a> {
    pub generator: &'a AdamState,
    pub discriminator: Option<&'a AdamState>,
}

/// A checkpoint read back from disk.
pub struct LoadedCheckpoint {
    pub manifest: Manifest,
    pub models: Models<f32>,
    /// Raw `opt.*` moment blobs by entry name; empty when the checkpoint
    /// was written without optimizer state.
    pub optimizer_blobs: HashMap<String, Vec<f32>>,
}

impl std::fmt::Debug for LoadedCheckpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LoadedCheckpoint")
            .field("manifest", &self.manifest)
            .field("optimizer_blobs", &self.optimizer_blobs.len())
            .finish_non_exhaustive()
    }
}

// ---------------------------------------------------------------------------
// Low-level entry encoding
// ---------------------------------------------------------------------------

enum Payload {
    F32(Vec<f32>),
    Bytes(Vec<u8>),
}

struct Entry {
    name: String,
    payload: Payload,
}

fn push_entry(buf: &mut Vec<u8>, entry: &Entry) {
    let name = entry.name.as_bytes();
    assert!(name.len() <= u16::MAX as usize, "entry name too long");
    buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
    buf.extend_from_slice(name);
    match &entry.payload {
        Payload::F32(values) => {
            buf.push(DTYPE_F32);
            buf.push(1); // rank
            buf.extend_from_slice(&(values.len() as u32).to_le_bytes());
            for v in values {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        Payload::Bytes(bytes) => {
            buf.push(DTYPE_U8);
            buf.push(1); // rank
            buf.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
            buf.extend_from_slice(bytes);
        }
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, context: &'static str) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.buf.len() {
            return Err(CheckpointError::Truncated { context });
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self, context: &'static str) -> Result<u8, CheckpointError> {
        Ok(self.take(1, context)?[0])
    }

    fn u16(&mut self, context: &'static str) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2, context)?.try_into().unwrap()))
    }

    fn u32(&mut self, context: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, context)?.try_into().unwrap()))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

fn read_entry(cur: &mut Cursor<'_>) -> Result<Entry, CheckpointError> {
    let name_len = cur.u16("entry name length")? as usize;
    let name = String::from_utf8(cur.take(name_len, "entry name")?.to_vec())?;
    let dtype = cur.u8("dtype code")?;
    let rank = cur.u8("rank")? as usize;
    let mut numel = 1usize;
    for _ in 0..rank {
        numel = numel.saturating_mul(cur.u32("dims")? as usize);
    }
    let elem_size = match dtype {
        DTYPE_F32 => 4,
        DTYPE_U8 => 1,
        code => return Err(CheckpointError::Dtype { name, code }),
    };
    let payload_len = numel * elem_size;
    if cur.remaining() < payload_len {
        return Err(CheckpointError::BlobLength {
            name,
            expected: payload_len,
            got: cur.remaining(),
        });
    }
    let raw = cur.take(payload_len, "payload")?;
    let payload = match dtype {
        DTYPE_F32 => Payload::F32(
            raw.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        _ => Payload::Bytes(raw.to_vec()),
    };
    Ok(Entry { name, payload })
}

fn encode_file(entries: &[Entry]) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for entry in entries {
        push_entry(&mut buf, entry);
    }
    buf
}

fn decode_file(buf: &[u8]) -> Result<Vec<Entry>, CheckpointError> {
    let mut cur = Cursor { buf, pos: 0 };
    let magic: [u8; 4] = cur.take(4, "magic")?.try_into().unwrap();
    if magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic { got: magic });
    }
    let version = cur.u32("format version")?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version { got: version });
    }
    let count = cur.u32("entry count")? as usize;
    let mut entries = Vec::with_capacity(count.min(1 << 16));
    let mut seen = std::collections::HashSet::new();
    for _ in 0..count {
        let entry = read_entry(&mut cur)?;
        if !seen.insert(entry.name.clone()) {
            return Err(CheckpointError::Duplicate { name: entry.name });
        }
        entries.push(entry);
    }
    if cur.remaining() != 0 {
        return Err(CheckpointError::TrailingBytes {
            extra: cur.remaining(),
        });
    }
    Ok(entries)
}

// ---------------------------------------------------------------------------
// Model-level API
// ---------------------------------------------------------------------------

fn moment_entries<T: Real>(
    network: &str,
    state: &AdamState,
    params: &ParamSet<T>,
    out: &mut Vec<Entry>,
) {
    for pm in state.snapshot(params) {
        out.push(Entry {
            name: format!("{OPTIMIZER_PREFIX}{network}.{}.m", pm.name),
            payload: Payload::F32(pm.m.iter().map(|&x| x as f32).collect()),
        });
        out.push(Entry {
            name: format!("{OPTIMIZER_PREFIX}{network}.{}.v", pm.name),
            payload: Payload::F32(pm.v.iter().map(|&x| x as f32).collect()),
        });
    }
}

/// Writes `models` (and optionally its optimizer states) to `path`.
///
/// Parameters are stored as f32 regardless of the in-memory dtype.
pub fn save_checkpoint<T: Real>(
    models: &Models<T>,
    states: Option<OptimizerStates<'_>>,
    manifest: &Manifest,
    path: &Path,
) -> Result<(), CheckpointError> {
    let mut entries = vec![Entry {
        name: MANIFEST_ENTRY.to_string(),
        payload: Payload::Bytes(serde_json::to_vec(manifest)?),
    }];
    for (name, values) in models.export_blobs() {
        entries.push(Entry {
            name,
            payload: Payload::F32(values.iter().map(|v| v.as_f64() as f32).collect()),
        });
    }
    if let Some(states) = states {
        moment_entries("g", states.generator, &models.generator_params(), &mut entries);
        if let (Some(d_state), Some(d_params)) =
            (states.discriminator, models.discriminator_params())
        {
            moment_entries("d", d_state, &d_params, &mut entries);
        }
    }
    fs::write(path, encode_file(&entries))?;
    Ok(())
}

/// Reads a checkpoint and rebuilds the networks it describes, bit-exactly.
pub fn load_checkpoint(path: &Path) -> Result<LoadedCheckpoint, ModelError> {
    let buf = fs::read(path).map_err(CheckpointError::from)?;
    let entries = decode_file(&buf)?;

    let manifest_json = match entries.first() {
        Some(Entry {
            name,
            payload: Payload::Bytes(bytes),
        }) if name == MANIFEST_ENTRY => bytes,
        Some(entry) => {
            return Err(CheckpointError::MissingManifest {
                found: entry.name.clone(),
            }
            .into())
        }
        None => {
            return Err(CheckpointError::MissingManifest {
                found: "(no entries)".to_string(),
            }
            .into())
        }
    };
    let manifest: Manifest =
        serde_json::from_slice(manifest_json).map_err(CheckpointError::from)?;

    let mut model_blobs: HashMap<String, Vec<f32>> = HashMap::new();
    let mut optimizer_blobs: HashMap<String, Vec<f32>> = HashMap::new();
    for entry in &entries[1..] {
        let values = match &entry.payload {
            Payload::F32(values) => values.clone(),
            Payload::Bytes(_) => {
                return Err(CheckpointError::Dtype {
                    name: entry.name.clone(),
                    code: DTYPE_U8,
                }
                .into())
            }
        };
        if entry.name.starts_with(OPTIMIZER_PREFIX) {
            optimizer_blobs.insert(entry.name.clone(), values);
        } else {
            model_blobs.insert(entry.name.clone(), values);
        }
    }

    let models = build_models::<f32>(&manifest.model, manifest.seed)?;
    models.import_blobs(&model_blobs)?;
    Ok(LoadedCheckpoint {
        manifest,
        models,
        optimizer_blobs,
    })
}

impl LoadedCheckpoint {
    /// Rebuilds the generator optimizer from the stored moment blobs, or
    /// `None` when the checkpoint carries no optimizer state.
    pub fn generator_optimizer(&self) -> Result<Option<AdamState>, ModelError> {
        self.rebuild_optimizer("g", &self.models.generator_params(), self.manifest.optimizer.generator_steps)
    }

    /// Likewise for the discriminator, when the variant has one.
    pub fn discriminator_optimizer(&self) -> Result<Option<AdamState>, ModelError> {
        match self.models.discriminator_params() {
            Some(params) => {
                self.rebuild_optimizer("d", &params, self.manifest.optimizer.discriminator_steps)
            }
            None => Ok(None),
        }
    }

    fn rebuild_optimizer(
        &self,
        network: &str,
        params: &ParamSet<f32>,
        steps: u64,
    ) -> Result<Option<AdamState>, ModelError> {
        if self.optimizer_blobs.is_empty() {
            return Ok(None);
        }
        let mut moments = Vec::with_capacity(params.len());
        for (name, _) in params.iter() {
            let m_key = format!("{OPTIMIZER_PREFIX}{network}.{name}.m");
            let v_key = format!("{OPTIMIZER_PREFIX}{network}.{name}.v");
            let fetch = |key: &str| -> Result<Vec<f64>, ModelError> {
                self.optimizer_blobs
                    .get(key)
                    .map(|v| v.iter().map(|&x| x as f64).collect())
                    .ok_or_else(|| ModelError::MissingBlob {
                        name: key.to_string(),
                    })
            };
            moments.push(ParamMoments {
                name: name.to_string(),
                m: fetch(&m_key)?,
                v: fetch(&v_key)?,
            });
        }
        let mut state = AdamState::new(self.manifest.optimizer.hyper());
        state.restore(params, steps, &moments).map_err(ModelError::from)?;
        Ok(Some(state))
    }
}
