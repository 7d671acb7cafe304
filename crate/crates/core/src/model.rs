//! One handle over every model kind, built from a run configuration.

use crate::baselines::{BowBaseline, MajorityBaseline, RandomBaseline};
use crate::config::{ModelKind, RunConfig};
use crate::corpus::{build_vocab, DatasetSplit, VocabMap};
use crate::error::ModelError;
use crate::params::ParamStore;
use crate::predict::Predictor;
use crate::quartet::QuartetModel;
use crate::tagging::TaggingModel;
use crate::train::{train, TrainReport};

pub enum Model {
    Quartet(QuartetModel),
    Tagging(TaggingModel),
    Random(RandomBaseline),
    Majority(MajorityBaseline),
    Bow(BowBaseline),
}

impl Model {
    /// Freshly initialized model. Neural kinds need `vocab`; the majority
    /// baseline is fitted on `train` (no-effect when absent).
    pub fn init(cfg: &RunConfig, vocab: Option<VocabMap>, train: Option<&DatasetSplit>) -> Result<Model, ModelError> {
        let need_vocab = || vocab.clone().ok_or_else(|| ModelError::Config(format!("{} needs a vocabulary", cfg.model)));
        Ok(match cfg.model {
            ModelKind::Quartet | ModelKind::EffectOnly | ModelKind::AnswerOnly => {
                Model::Quartet(QuartetModel::toy(cfg.quartet_config(), need_vocab()?, cfg.seed)?)
            }
            ModelKind::Tagging => Model::Tagging(TaggingModel::toy(cfg.tagging_config(), need_vocab()?, cfg.seed)?),
            ModelKind::Random => Model::Random(RandomBaseline::new(cfg.seed)),
            ModelKind::Majority => Model::Majority(match train {
                Some(t) => MajorityBaseline::fit(t)?,
                None => MajorityBaseline::no_effect(),
            }),
            ModelKind::Bow => Model::Bow(BowBaseline),
        })
    }

    /// Vocabulary for a neural model trained on `train`.
    pub fn vocab_for(cfg: &RunConfig, train: &DatasetSplit) -> VocabMap {
        build_vocab(&[train], cfg.min_count, cfg.encoder.max_markers)
    }

    pub fn predictor(&self) -> &dyn Predictor {
        match self {
            Model::Quartet(m) => m,
            Model::Tagging(m) => m,
            Model::Random(m) => m,
            Model::Majority(m) => m,
            Model::Bow(m) => m,
        }
    }

    pub fn params(&self) -> Option<&ParamStore> {
        match self {
            Model::Quartet(m) => Some(&m.store),
            Model::Tagging(m) => Some(&m.store),
            _ => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<&mut ParamStore> {
        match self {
            Model::Quartet(m) => Some(&mut m.store),
            Model::Tagging(m) => Some(&mut m.store),
            _ => None,
        }
    }

    pub fn vocab(&self) -> Option<&VocabMap> {
        match self {
            Model::Quartet(m) => m.stack.vocab(),
            Model::Tagging(m) => m.stack.vocab(),
            _ => None,
        }
    }

    /// Trains neural models; baselines are already fitted and report no curve.
    pub fn fit(&mut self, cfg: &RunConfig, split: &DatasetSplit, on_epoch: impl FnMut(usize, f64)) -> Result<Option<TrainReport>, ModelError> {
        match self {
            Model::Quartet(m) => train(m, split, &cfg.train, on_epoch).map(Some),
            Model::Tagging(m) => train(m, split, &cfg.train, on_epoch).map(Some),
            Model::Majority(m) => {
                *m = MajorityBaseline::fit(split)?;
                Ok(None)
            }
            _ => Ok(None),
        }
    }
}
