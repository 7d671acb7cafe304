//! Mini-batch AdamW training shared by the neural models.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::corpus::{DatasetSplit, Example};
use crate::encoder::ForwardCtx;
use crate::error::ModelError;
use crate::params::{AdamW, AdamWConfig, Grads, ParamStore};

/// A model whose parameters can be fitted by [`train`].
pub trait Trainable: Sync {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    fn example_loss(&self, tape: &mut Tape, ex: &Example, ctx: &mut ForwardCtx) -> Result<Var, ModelError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub seed: u64,
    /// Fraction of steps with linear warmup.
    pub warmup_frac: f64,
    /// Decay linearly to 0 after warmup; otherwise hold the peak rate.
    pub decay: bool,
    pub grad_clip: Option<f64>,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 3,
            batch_size: 16,
            lr: 1e-5,
            weight_decay: 0.01,
            dropout: 0.2,
            seed: 13,
            warmup_frac: 0.1,
            decay: true,
            grad_clip: Some(1.0),
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(ModelError::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        if self.weight_decay < 0.0 {
            return Err(ModelError::Config("weight decay must be non-negative".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(ModelError::Config("epochs and batch size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.warmup_frac) {
            return Err(ModelError::Config("warmup fraction must be in [0, 1]".into()));
        }
        Ok(())
    }

    fn lr_at(&self, step: usize, total: usize) -> f64 {
        let warmup = (self.warmup_frac * total as f64).round() as usize;
        let factor = if step < warmup {
            (step + 1) as f64 / warmup as f64
        } else if self.decay && total > warmup {
            (total - step) as f64 / (total - warmup) as f64
        } else {
            1.0
        };
        self.lr * factor
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training loss of each epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

fn example_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (index as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
}

/// Fits `model` on `split`. Per-example gradients are computed in parallel
/// and summed in example order, so runs are reproducible for a fixed seed.
/// `on_epoch` receives each finished epoch and its mean loss.
pub fn train<M: Trainable>(
    model: &mut M,
    split: &DatasetSplit,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainReport, ModelError> {
    cfg.validate()?;
    if split.is_empty() {
        return Err(ModelError::EmptySplit);
    }
    let mut opt = AdamW::new(
        AdamWConfig {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            ..AdamWConfig::default()
        },
        model.params(),
    );
    let n = split.len();
    let batches_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = batches_per_epoch * cfg.epochs;
    let mut order: Vec<usize> = (0..n).collect();
    let mut report = TrainReport {
        epoch_losses: Vec::with_capacity(cfg.epochs),
        steps: 0,
    };
    for epoch in 1..=cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(example_seed(cfg.seed, epoch, usize::MAX)));
        }
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let m: &M = model;
            let results: Vec<Result<(f64, Grads), ModelError>> = batch
                .par_iter()
                .map(|&idx| {
                    let ex = &split.examples[idx];
                    let mut tape = Tape::new(m.params());
                    let mut ctx = ForwardCtx::training(cfg.dropout, example_seed(cfg.seed, epoch, idx));
                    let loss = m.example_loss(&mut tape, ex, &mut ctx)?;
                    let value = tape.scalar(loss);
                    if !value.is_finite() {
                        return Err(ModelError::Diverged {
                            epoch,
                            example: ex.id().to_string(),
                            loss: value,
                        });
                    }
                    Ok((value, tape.backward(loss)))
                })
                .collect();
            let mut grads = Grads::zeros_like(model.params());
            for r in results {
                let (value, g) = r?;
                epoch_loss += value;
                grads.add_assign(&g);
            }
            grads.scale(1.0 / batch.len() as f64);
            if !grads.is_finite() {
                return Err(ModelError::Diverged {
                    epoch,
                    example: format!("batch at step {}", report.steps + 1),
                    loss: f64::NAN,
                });
            }
            if let Some(clip) = cfg.grad_clip {
                let norm = grads.global_norm();
                if norm > clip {
                    grads.scale(clip / norm);
                }
            }
            opt.config.lr = cfg.lr_at(report.steps, total_steps);
            opt.step(model.params_mut(), &grads);
            report.steps += 1;
        }
        let mean = epoch_loss / n as f64;
        log::info!("epoch {epoch}: mean loss {mean:.4}");
        on_epoch(epoch, mean);
        report.epoch_losses.push(mean);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_warms_up_then_decays() {
        let cfg = TrainConfig {
            lr: 1.0,
            warmup_frac: 0.2,
            ..TrainConfig::default()
        };
        let lrs: Vec<f64> = (0..10).map(|s| cfg.lr_at(s, 10)).collect();
        assert_eq!(lrs[0], 0.5);
        assert_eq!(lrs[1], 1.0);
        assert_eq!(lrs[2], 1.0);
        assert!(lrs.windows(2).skip(2).all(|w| w[1] < w[0]));
        assert!(lrs[9] > 0.0);
    }

    #[test]
    fn rejects_bad_settings() {
        for bad in [
            TrainConfig {
                lr: 0.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                lr: -1e-5,
                ..TrainConfig::default()
            },
            TrainConfig {
                dropout: 1.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                epochs: 0,
                ..TrainConfig::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
