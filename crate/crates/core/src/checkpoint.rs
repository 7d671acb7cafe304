//! Checkpoints: one JSON document with named parameter tensors, the
//! vocabulary and a fingerprint of the configuration that shaped them.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::baselines::{BowBaseline, MajorityBaseline, RandomBaseline};
use crate::config::{ModelKind, RunConfig};
use crate::corpus::{GoldRecord, VocabMap};
use crate::error::ModelError;
use crate::model::Model;
use crate::params::NamedTensor;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Json(#[from] serde_json::Error),
    #[error("checkpoint format {found} is not supported (expected {FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("checkpoint was written for a different configuration (fingerprint {stored}, config gives {current})")]
    Fingerprint { stored: String, current: String },
    #[error("checkpoint holds a {stored} model, config asks for {requested}")]
    Kind { stored: String, requested: String },
    #[error("parameter digest mismatch: checkpoint is corrupted")]
    Digest,
    #[error("checkpoint is incomplete: {0}")]
    Incomplete(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: u32,
    pub model: String,
    pub fingerprint: String,
    /// The full configuration text at save time, for reference.
    pub config: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab: Option<Vec<String>>,
    pub max_markers: usize,
    pub params: BTreeMap<String, NamedTensor>,
    /// SHA-256 over the serialized parameter map.
    pub digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub majority: Option<GoldRecord>,
    /// Mean loss per epoch over every training run so far.
    #[serde(default)]
    pub loss_curve: Vec<f64>,
}

fn digest(params: &BTreeMap<String, NamedTensor>) -> Result<String, serde_json::Error> {
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(params)?)))
}

impl Checkpoint {
    pub fn capture(model: &Model, cfg: &RunConfig, loss_curve: Vec<f64>) -> Result<Checkpoint, CheckpointError> {
        let params = model.params().map(|p| p.to_named()).unwrap_or_default();
        Ok(Checkpoint {
            format: FORMAT_VERSION,
            model: cfg.model.to_string(),
            fingerprint: cfg.fingerprint(),
            config: cfg.to_text(),
            vocab: model.vocab().map(|v| v.tokens().to_vec()),
            max_markers: cfg.encoder.max_markers,
            digest: digest(&params)?,
            params,
            random_seed: match model {
                Model::Random(r) => Some(r.seed),
                _ => None,
            },
            majority: match model {
                Model::Majority(m) => Some(GoldRecord::from(&m.explanation)),
                _ => None,
            },
            loss_curve,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Checkpoint, CheckpointError> {
        let ck: Checkpoint = serde_json::from_slice(&fs::read(path)?)?;
        if ck.format != FORMAT_VERSION {
            return Err(CheckpointError::Version { found: ck.format });
        }
        if digest(&ck.params)? != ck.digest {
            return Err(CheckpointError::Digest);
        }
        Ok(ck)
    }

    /// Rebuilds the model, refusing configurations whose fingerprint differs.
    pub fn restore(&self, cfg: &RunConfig) -> Result<Model, CheckpointError> {
        if self.model != cfg.model.as_str() {
            return Err(CheckpointError::Kind {
                stored: self.model.clone(),
                requested: cfg.model.to_string(),
            });
        }
        let current = cfg.fingerprint();
        if self.fingerprint != current {
            return Err(CheckpointError::Fingerprint {
                stored: self.fingerprint.clone(),
                current,
            });
        }
        let model = match cfg.model {
            ModelKind::Random => {
                let seed = self.random_seed.ok_or_else(|| CheckpointError::Incomplete("random seed".into()))?;
                Model::Random(RandomBaseline::new(seed))
            }
            ModelKind::Majority => {
                let g = self.majority.as_ref().ok_or_else(|| CheckpointError::Incomplete("majority answer".into()))?;
                Model::Majority(MajorityBaseline::constant(g.to_explanation()))
            }
            ModelKind::Bow => Model::Bow(BowBaseline),
            _ => {
                let tokens = self.vocab.clone().ok_or_else(|| CheckpointError::Incomplete("vocabulary".into()))?;
                let vocab = VocabMap::from_tokens(tokens, self.max_markers).map_err(CheckpointError::Incomplete)?;
                let mut model = Model::init(cfg, Some(vocab), None)?;
                let store = model.params_mut().expect("neural model has parameters");
                store.load_named(&self.params).map_err(CheckpointError::Incomplete)?;
                model
            }
        };
        Ok(model)
    }
}

/// Reads and restores in one step.
pub fn load(path: &Path, cfg: &RunConfig) -> Result<(Model, Checkpoint), CheckpointError> {
    let ck = Checkpoint::read(path)?;
    let model = ck.restore(cfg)?;
    Ok((model, ck))
}
