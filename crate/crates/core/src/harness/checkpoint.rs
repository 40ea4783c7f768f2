//! Checkpoint format: one JSON header line (version, config, vocabulary,
//! training metadata, tensor manifest), then the raw little-endian IEEE-754
//! 64-bit parameter payload in manifest order. Round trips are bit-exact.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::train::TrainConfig;
use crate::data::Vocab;
use crate::model::{ModelConfig, ModelWeights};
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: &str = "metaqa-ckpt/1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("bad checkpoint header: {0}")]
    BadHeader(String),
    #[error("checkpoint version {found:?} unsupported (expected {CHECKPOINT_VERSION:?})")]
    Version { found: String },
    #[error("corrupt checkpoint: expected {expected} payload bytes, found {found}")]
    Corrupt { expected: usize, found: usize },
    #[error("checkpoint does not describe a valid model: {0}")]
    Model(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub seed: u64,
    pub steps: usize,
    pub config_hash: String,
    pub train_config: TrainConfig,
    pub loss_curve: Vec<f64>,
    /// Derived substream seeds recorded for reproducibility.
    pub substreams: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: String,
    pub model_cfg: ModelConfig,
    pub vocab: Vocab,
    pub weights: ModelWeights,
    pub meta: TrainMeta,
}

impl Checkpoint {
    pub fn theta(&self) -> f64 {
        self.meta.train_config.theta
    }
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: String,
    model: ModelConfig,
    vocab: Vec<String>,
    meta: TrainMeta,
    manifest: Vec<ManifestEntry>,
}

pub fn checkpoint_to_bytes(ckpt: &Checkpoint) -> Vec<u8> {
    let named = ckpt.weights.to_named();
    let header = Header {
        version: ckpt.version.clone(),
        model: ckpt.model_cfg.clone(),
        vocab: ckpt.vocab.tokens().to_vec(),
        meta: ckpt.meta.clone(),
        manifest: named
            .iter()
            .map(|(name, t)| ManifestEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let mut out = serde_json::to_string(&header)
        .expect("header serializes")
        .into_bytes();
    out.push(b'\n');
    for (_, t) in &named {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| CheckpointError::BadHeader("missing header line".into()))?;
    let header: Header = serde_json::from_slice(&bytes[..newline])
        .map_err(|e| CheckpointError::BadHeader(e.to_string()))?;
    if header.version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version {
            found: header.version,
        });
    }
    let payload = &bytes[newline + 1..];
    let expected: usize = header
        .manifest
        .iter()
        .map(|e| e.shape.iter().product::<usize>() * 8)
        .sum();
    if payload.len() != expected {
        return Err(CheckpointError::Corrupt {
            expected,
            found: payload.len(),
        });
    }
    let mut named = Vec::with_capacity(header.manifest.len());
    let mut offset = 0;
    for entry in &header.manifest {
        let numel: usize = entry.shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            let mut raw = [0u8; 8];
            raw.copy_from_slice(&payload[offset..offset + 8]);
            data.push(f64::from_le_bytes(raw));
            offset += 8;
        }
        named.push((entry.name.clone(), Tensor::from_shape(entry.shape.clone(), data)));
    }
    let weights =
        ModelWeights::from_named(&header.model, &named).map_err(CheckpointError::Model)?;
    let vocab = Vocab::from_tokens(header.vocab).map_err(CheckpointError::Model)?;
    Ok(Checkpoint {
        version: CHECKPOINT_VERSION.to_string(),
        model_cfg: header.model,
        vocab,
        weights,
        meta: header.meta,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    fs::write(path, checkpoint_to_bytes(ckpt)).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    checkpoint_from_bytes(&bytes)
}
