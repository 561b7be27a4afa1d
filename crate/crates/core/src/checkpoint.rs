//! On-disk model snapshots.
//!
//! A checkpoint is a directory with two files:
//!
//! * `model.safetensors`: every parameter tensor, keyed by its dotted name
//!   (`cit.*`, `gen.*`, `disc.*`).
//! * `checkpoint.json`: format version, [`NetworkConfig`], the vocabulary
//!   manifest text and its SHA-256, whether the CIT extractor was pretrained,
//!   and the training position when saved.
//!
//! Loading checks the version and, when a vocabulary is supplied, that its
//! hash matches the stored one.

use std::path::{Path, PathBuf};

use candle_core::DType;
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::losses::TrainingStep;
use crate::nets::{Model, NetworkConfig};
use crate::tagspace::TagVocabulary;
use crate::training::TrainSchedule;

pub const CHECKPOINT_VERSION: u32 = 1;
pub const WEIGHTS_FILE: &str = "model.safetensors";
pub const META_FILE: &str = "checkpoint.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleState {
    pub schedule: TrainSchedule,
    /// Completed epochs.
    pub epoch: usize,
    pub step: TrainingStep,
    pub iter: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub version: u32,
    /// Short hash of the weights.
    pub id: String,
    pub config: NetworkConfig,
    pub vocab_hash: String,
    pub vocab: String,
    pub cit_pretrained: bool,
    pub schedule_state: Option<ScheduleState>,
}

pub fn save_checkpoint(
    dir: &Path,
    model: &Model,
    vocab: &TagVocabulary,
    schedule_state: Option<ScheduleState>,
) -> Result<CheckpointMeta> {
    model.config.check_vocab(vocab)?;
    std::fs::create_dir_all(dir).at(dir)?;
    model.store.save_safetensors(&dir.join(WEIGHTS_FILE))?;
    let meta = CheckpointMeta {
        version: CHECKPOINT_VERSION,
        id: model.store.hash("")?[..12].to_string(),
        config: model.config.clone(),
        vocab_hash: vocab.hash(),
        vocab: vocab.to_manifest_string(),
        cit_pretrained: model.cit.is_pretrained(),
        schedule_state,
    };
    let path = dir.join(META_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&meta)?).at(&path)?;
    Ok(meta)
}

pub fn read_meta(dir: &Path) -> Result<CheckpointMeta> {
    let path = dir.join(META_FILE);
    let text = std::fs::read_to_string(&path).at(&path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let version = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion {
            what: "checkpoint",
            found: version,
            supported: CHECKPOINT_VERSION,
        });
    }
    Ok(serde_json::from_value(value)?)
}

#[derive(Debug, Clone)]
pub struct LoadedCheckpoint {
    pub dir: PathBuf,
    pub model: Model,
    pub vocab: TagVocabulary,
    pub meta: CheckpointMeta,
}

/// Rebuilds the networks from the stored config and overwrites their
/// parameters with the stored tensors.
pub fn load_checkpoint(dir: &Path, expected_vocab: Option<&TagVocabulary>, dtype: DType) -> Result<LoadedCheckpoint> {
    let meta = read_meta(dir)?;
    let vocab = TagVocabulary::from_manifest_str(&meta.vocab)?;
    if vocab.hash() != meta.vocab_hash {
        return Err(Error::VocabHashMismatch {
            expected: meta.vocab_hash.clone(),
            found: vocab.hash(),
        });
    }
    if let Some(v) = expected_vocab {
        if v.hash() != meta.vocab_hash {
            return Err(Error::VocabHashMismatch {
                expected: meta.vocab_hash.clone(),
                found: v.hash(),
            });
        }
    }
    meta.config.check_vocab(&vocab)?;
    let model = Model::new(meta.config.clone(), 0, dtype)?;
    model.store.load_safetensors(&dir.join(WEIGHTS_FILE))?;
    model.cit.set_pretrained(meta.cit_pretrained);
    Ok(LoadedCheckpoint {
        dir: dir.to_path_buf(),
        model,
        vocab,
        meta,
    })
}
