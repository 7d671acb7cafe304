//! Run configuration: flat `key = value` text with paper and desk presets.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::SynthConfig;
use crate::encoder::{EncoderConfig, LayerMixing, Pooling, StackConfig};
use crate::quartet::{HeadWeights, QuartetConfig, SpanTarget};
use crate::tagging::TaggingConfig;
use crate::train::TrainConfig;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: {msg}")]
    BadValue { key: String, msg: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Quartet,
    Tagging,
    Random,
    Majority,
    Bow,
    EffectOnly,
    AnswerOnly,
}

impl ModelKind {
    pub const ALL: [ModelKind; 7] = [
        ModelKind::Quartet,
        ModelKind::Tagging,
        ModelKind::Random,
        ModelKind::Majority,
        ModelKind::Bow,
        ModelKind::EffectOnly,
        ModelKind::AnswerOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Quartet => "quartet",
            ModelKind::Tagging => "tagging",
            ModelKind::Random => "random",
            ModelKind::Majority => "majority",
            ModelKind::Bow => "bow",
            ModelKind::EffectOnly => "effect-only",
            ModelKind::AnswerOnly => "answer-only",
        }
    }

    /// Models with trainable encoder parameters.
    pub fn is_neural(self) -> bool {
        matches!(
            self,
            ModelKind::Quartet | ModelKind::Tagging | ModelKind::EffectOnly | ModelKind::AnswerOnly
        )
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown model `{s}`"))
    }
}

/// File locations. Each can be overridden from the environment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Paths {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

/// Environment variables consulted by [`RunConfig::apply_env`].
pub const PATH_ENV: [(&str, &str); 5] = [
    ("QUARTET_TRAIN", "train_path"),
    ("QUARTET_DEV", "dev_path"),
    ("QUARTET_TEST", "test_path"),
    ("QUARTET_OUT", "out_dir"),
    ("QUARTET_CHECKPOINT", "checkpoint_path"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelKind,
    pub seed: u64,
    pub encoder: EncoderConfig,
    pub stack: StackConfig,
    pub loss_weights: HeadWeights,
    pub decode_weights: HeadWeights,
    pub span_target: SpanTarget,
    /// Weight of the tagger's answer loss.
    pub answer_weight: f64,
    pub train: TrainConfig,
    pub min_count: usize,
    pub synth: SynthConfig,
    pub paths: Paths,
}

const LR_GRID: [f64; 3] = [1e-5, 2e-5, 5e-5];
const DROPOUT_GRID: [f64; 3] = [0.1, 0.2, 0.3];
const WEIGHT_DECAY_GRID: [f64; 3] = [0.1, 0.01, 0.05];

impl RunConfig {
    /// The published setting: 12-layer, 768-wide encoder, lr 1e-5, weight
    /// decay 0.01, dropout 0.2.
    pub fn paper() -> RunConfig {
        let encoder = EncoderConfig {
            layers: 12,
            dim: 768,
            heads: 12,
            ffn_dim: 3072,
            max_len: 512,
            max_markers: 16,
            dropout: 0.2,
        };
        let mut stack = StackConfig::for_layers(12, 768);
        stack.direction_layers = vec![10, 11];
        RunConfig {
            model: ModelKind::Quartet,
            seed: 13,
            stack,
            encoder,
            loss_weights: [1.0; 4],
            decode_weights: [1.0; 4],
            span_target: SpanTarget::Null,
            answer_weight: 1.0,
            train: TrainConfig::default(),
            min_count: 1,
            synth: SynthConfig::default(),
            paths: Paths::default(),
        }
    }

    /// Small encoder trained from scratch on the synthetic corpus.
    pub fn desk() -> RunConfig {
        let encoder = EncoderConfig {
            layers: 4,
            dim: 32,
            heads: 4,
            ffn_dim: 64,
            max_len: 128,
            max_markers: 16,
            dropout: 0.0,
        };
        let mut stack = StackConfig::for_layers(4, 32);
        stack.pooling = Pooling::Mean;
        RunConfig {
            encoder,
            stack,
            train: TrainConfig {
                epochs: 30,
                batch_size: 4,
                lr: 1e-3,
                dropout: 0.0,
                decay: false,
                ..TrainConfig::default()
            },
            ..RunConfig::paper()
        }
    }

    pub fn preset(name: &str) -> Option<RunConfig> {
        match name {
            "paper" => Some(RunConfig::paper()),
            "desk" => Some(RunConfig::desk()),
            _ => None,
        }
    }

    /// Parses `key = value` lines over the desk preset, or over the preset
    /// named by a leading `preset = ...` line. `#` starts a comment.
    pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        let mut pairs = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: n + 1 })?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        let mut cfg = RunConfig::desk();
        for (k, v) in &pairs {
            if k == "preset" {
                cfg = RunConfig::preset(v).ok_or_else(|| bad(k, "expected `paper` or `desk`"))?;
            }
        }
        for (k, v) in &pairs {
            if k != "preset" {
                cfg.set(k, v)?;
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Invalid(format!("cannot read {}: {e}", path.display())))?;
        RunConfig::parse(&text)
    }

    /// Replaces path entries from `QUARTET_*` variables that are set.
    pub fn apply_env<F: Fn(&str) -> Option<String>>(&mut self, lookup: F) -> Result<(), ConfigError> {
        for (var, key) in PATH_ENV {
            if let Some(v) = lookup(var) {
                self.set(key, &v)?;
            }
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let e = &mut self.encoder;
        let t = &mut self.train;
        let s = &mut self.synth;
        match key {
            "model" => self.model = value.parse().map_err(|m: String| bad(key, &m))?,
            "seed" => {
                self.seed = num(key, value)?;
                t.seed = self.seed;
            }
            "layers" => e.layers = num(key, value)?,
            "dim" => e.dim = num(key, value)?,
            "heads" => e.heads = num(key, value)?,
            "ffn_dim" => e.ffn_dim = num(key, value)?,
            "max_len" => e.max_len = num(key, value)?,
            "max_markers" => e.max_markers = num(key, value)?,
            "head_dim" => self.stack.head_dim = num(key, value)?,
            "span_layers" => self.stack.span_layers = list(key, value)?,
            "direction_layers" => self.stack.direction_layers = list(key, value)?,
            "pooling" => {
                self.stack.pooling = match value {
                    "marker" => Pooling::Marker,
                    "mean" => Pooling::Mean,
                    _ => return Err(bad(key, "expected `marker` or `mean`")),
                }
            }
            "layer_mixing" => {
                self.stack.mixing = match value {
                    "concat" => LayerMixing::Concat,
                    "weighted" => LayerMixing::Weighted,
                    _ => return Err(bad(key, "expected `concat` or `weighted`")),
                }
            }
            "loss_weights" => self.loss_weights = weights(key, value)?,
            "decode_weights" => self.decode_weights = weights(key, value)?,
            "span_target" => {
                self.span_target = match value {
                    "null" => SpanTarget::Null,
                    "mask" => SpanTarget::Mask,
                    _ => return Err(bad(key, "expected `null` or `mask`")),
                }
            }
            "answer_weight" => self.answer_weight = num(key, value)?,
            "epochs" => t.epochs = num(key, value)?,
            "batch_size" => t.batch_size = num(key, value)?,
            "lr" => t.lr = num(key, value)?,
            "weight_decay" => t.weight_decay = num(key, value)?,
            "dropout" => {
                t.dropout = num(key, value)?;
                e.dropout = t.dropout;
            }
            "warmup_frac" => t.warmup_frac = num(key, value)?,
            "decay" => t.decay = num(key, value)?,
            "grad_clip" => t.grad_clip = if value == "none" { None } else { Some(num(key, value)?) },
            "shuffle" => t.shuffle = num(key, value)?,
            "min_count" => self.min_count = num(key, value)?,
            "synth_seed" => s.seed = num(key, value)?,
            "synth_passages" => s.n_passages = num(key, value)?,
            "synth_k_min" => s.k_min = num(key, value)?,
            "synth_k_max" => s.k_max = num(key, value)?,
            "synth_noeffect_frac" => s.noeffect_frac = num(key, value)?,
            "synth_paraphrase_rate" => s.paraphrase_rate = num(key, value)?,
            "synth_questions_per_passage" => s.questions_per_passage = num(key, value)?,
            "synth_out_of_para_frac" => s.out_of_para_frac = num(key, value)?,
            "synth_inhibitors" => s.inhibitors = num(key, value)?,
            "train_path" => self.paths.train = path(value),
            "dev_path" => self.paths.dev = path(value),
            "test_path" => self.paths.test = path(value),
            "out_dir" => self.paths.out_dir = path(value),
            "checkpoint_path" => self.paths.checkpoint = path(value),
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Every key with its current value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let mut out = self.model_entries();
        let t = &self.train;
        let s = &self.synth;
        let p = |v: &Option<PathBuf>| v.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        out.extend([
            ("seed", self.seed.to_string()),
            ("epochs", t.epochs.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("lr", t.lr.to_string()),
            ("weight_decay", t.weight_decay.to_string()),
            ("dropout", t.dropout.to_string()),
            ("warmup_frac", t.warmup_frac.to_string()),
            ("decay", t.decay.to_string()),
            ("grad_clip", t.grad_clip.map_or("none".to_string(), |c| c.to_string())),
            ("shuffle", t.shuffle.to_string()),
            ("synth_seed", s.seed.to_string()),
            ("synth_passages", s.n_passages.to_string()),
            ("synth_k_min", s.k_min.to_string()),
            ("synth_k_max", s.k_max.to_string()),
            ("synth_noeffect_frac", s.noeffect_frac.to_string()),
            ("synth_paraphrase_rate", s.paraphrase_rate.to_string()),
            ("synth_questions_per_passage", s.questions_per_passage.to_string()),
            ("synth_out_of_para_frac", s.out_of_para_frac.to_string()),
            ("synth_inhibitors", s.inhibitors.to_string()),
            ("train_path", p(&self.paths.train)),
            ("dev_path", p(&self.paths.dev)),
            ("test_path", p(&self.paths.test)),
            ("out_dir", p(&self.paths.out_dir)),
            ("checkpoint_path", p(&self.paths.checkpoint)),
        ]);
        out
    }

    /// Keys that shape the model's parameters or predictions.
    fn model_entries(&self) -> Vec<(&'static str, String)> {
        let e = &self.encoder;
        let st = &self.stack;
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let w = |v: &HeadWeights| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        vec![
            ("model", self.model.to_string()),
            ("layers", e.layers.to_string()),
            ("dim", e.dim.to_string()),
            ("heads", e.heads.to_string()),
            ("ffn_dim", e.ffn_dim.to_string()),
            ("max_len", e.max_len.to_string()),
            ("max_markers", e.max_markers.to_string()),
            ("head_dim", st.head_dim.to_string()),
            ("span_layers", join(&st.span_layers)),
            ("direction_layers", join(&st.direction_layers)),
            (
                "pooling",
                match st.pooling {
                    Pooling::Marker => "marker",
                    Pooling::Mean => "mean",
                }
                .to_string(),
            ),
            (
                "layer_mixing",
                match st.mixing {
                    LayerMixing::Concat => "concat",
                    LayerMixing::Weighted => "weighted",
                }
                .to_string(),
            ),
            ("loss_weights", w(&self.loss_weights)),
            ("decode_weights", w(&self.decode_weights)),
            (
                "span_target",
                match self.span_target {
                    SpanTarget::Null => "null",
                    SpanTarget::Mask => "mask",
                }
                .to_string(),
            ),
            ("answer_weight", self.answer_weight.to_string()),
            ("min_count", self.min_count.to_string()),
        ]
    }

    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// SHA-256 over the model-shaping keys. Paths, seeds and optimizer
    /// settings do not change it.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.model_entries() {
            h.update(k.as_bytes());
            h.update(b"=");
            h.update(v.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    /// Hard errors for settings that cannot run.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.train.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.synth.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let e = &self.encoder;
        if e.layers == 0 || e.dim == 0 || e.heads == 0 || e.dim % e.heads != 0 {
            return Err(ConfigError::Invalid(format!(
                "encoder needs layers > 0 and dim divisible by heads (dim {}, heads {})",
                e.dim, e.heads
            )));
        }
        for (name, sel) in [("span_layers", &self.stack.span_layers), ("direction_layers", &self.stack.direction_layers)] {
            if sel.is_empty() || sel.iter().any(|&l| l == 0 || l > e.layers) {
                return Err(ConfigError::Invalid(format!("{name} must select layers in 1..={}", e.layers)));
            }
        }
        if self.loss_weights.iter().chain(&self.decode_weights).any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(ConfigError::Invalid("head weights must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// Notes for optimizer settings outside the published search grid.
    pub fn warnings(&self) -> Vec<String> {
        let t = &self.train;
        let mut out = Vec::new();
        for (name, v, grid) in [
            ("lr", t.lr, LR_GRID),
            ("dropout", t.dropout, DROPOUT_GRID),
            ("weight_decay", t.weight_decay, WEIGHT_DECAY_GRID),
        ] {
            if !grid.iter().any(|g| (g - v).abs() <= 1e-12) {
                out.push(format!("{name} = {v} is outside the paper search grid {grid:?}"));
            }
        }
        out
    }

    pub fn quartet_config(&self) -> QuartetConfig {
        let cfg = QuartetConfig {
            encoder: self.encoder.clone(),
            stack: self.stack.clone(),
            loss_weights: self.loss_weights,
            decode_weights: self.decode_weights,
            span_target: self.span_target,
        };
        match self.model {
            ModelKind::AnswerOnly => cfg.answer_only(),
            ModelKind::EffectOnly => cfg.effect_only(),
            _ => cfg,
        }
    }

    pub fn tagging_config(&self) -> TaggingConfig {
        TaggingConfig {
            encoder: self.encoder.clone(),
            stack: self.stack.clone(),
            answer_weight: self.answer_weight,
        }
    }
}

fn bad(key: &str, msg: &str) -> ConfigError {
    ConfigError::BadValue {
        key: key.to_string(),
        msg: msg.to_string(),
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| bad(key, &format!("cannot parse `{value}`")))
}

fn list(key: &str, value: &str) -> Result<Vec<usize>, ConfigError> {
    value.split(',').map(|v| num(key, v.trim())).collect()
}

fn weights(key: &str, value: &str) -> Result<HeadWeights, ConfigError> {
    let v: Vec<f64> = value.split(',').map(|v| num(key, v.trim())).collect::<Result<_, _>>()?;
    v.try_into().map_err(|_| bad(key, "expected four comma-separated weights"))
}

fn path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}
