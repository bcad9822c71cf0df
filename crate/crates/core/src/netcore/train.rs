use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::grad::backward;
use super::model::MlpModel;
use super::optim::{Optimizer, OptimizerState};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::folds::ResidualCache;
use crate::losses::LossConfig;
use crate::rng::{self, stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Zero is accepted and freezes the parameters.
    pub learning_rate: f64,
    pub seed: u64,
    pub optimizer: Optimizer,
    /// Epochs without a new best validation L1 before stopping.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
            optimizer: Optimizer::default(),
            patience: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return Err(Error::Config(
                "epochs, batch_size and patience must be positive".into(),
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        self.optimizer.validate()
    }

    /// Stable hex digest of every field, for detecting stale residual caches.
    pub fn fingerprint(&self) -> String {
        let text = serde_json::to_string(self).expect("plain struct serializes");
        format!("{:016x}", fnv1a(text.as_bytes()))
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean minibatch loss over the epoch, measured before each step.
    pub train_loss: f64,
    pub val_l1: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    /// Epoch whose parameters were returned.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: MlpModel,
    pub log: TrainLog,
}

/// One minibatch as seen by the trainer, reported before the update.
#[derive(Debug)]
pub struct BatchEvent<'a> {
    pub epoch: usize,
    pub batch: usize,
    pub ids: &'a [usize],
}

pub fn train(
    model: MlpModel,
    data: &Dataset,
    cfg: &TrainConfig,
    loss_cfg: &LossConfig,
    residuals: Option<&ResidualCache>,
    validation: Option<&Dataset>,
) -> Result<TrainedModel> {
    train_observed(model, data, cfg, loss_cfg, residuals, validation, &mut |_| {})
}

/// Minibatch training with per-epoch reshuffling.
///
/// With a validation set the returned parameters are those with the lowest
/// validation L1 error, and training stops after `patience` epochs without
/// improvement. Without one, the final parameters are returned.
pub fn train_observed(
    mut model: MlpModel,
    data: &Dataset,
    cfg: &TrainConfig,
    loss_cfg: &LossConfig,
    residuals: Option<&ResidualCache>,
    validation: Option<&Dataset>,
    observer: &mut dyn FnMut(&BatchEvent<'_>),
) -> Result<TrainedModel> {
    cfg.validate()?;
    loss_cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    if let Some(cache) = residuals {
        for &id in data.ids() {
            cache.residual(id)?;
        }
    }

    let n = data.len();
    let mut state = OptimizerState::new(cfg.optimizer, &model);
    let mut shuffle = rng::stream_rng(cfg.seed, stream::SHUFFLE);
    let mut order: Vec<usize> = (0..n).collect();
    let mut log = TrainLog::default();
    let mut best: Option<(f64, MlpModel)> = None;
    let mut since_best = 0usize;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = data.batch(chunk);
            observer(&BatchEvent {
                epoch,
                batch: b,
                ids: &batch.ids,
            });
            let step = backward(&model, &batch, loss_cfg, residuals)?;
            if !step.loss.is_finite() || !step.grads.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: b,
                    loss: step.loss,
                });
            }
            total += step.loss * chunk.len() as f64;
            state.apply(&mut model, &step.grads, cfg.learning_rate);
        }

        let val_l1 = validation.map(|v| mean_abs_error(&model, v)).transpose()?;
        log.epochs.push(EpochLog {
            epoch,
            train_loss: total / n as f64,
            val_l1,
        });

        if let Some(v) = val_l1 {
            if !v.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: 0,
                    loss: v,
                });
            }
            if best.as_ref().is_none_or(|(b, _)| v < *b) {
                best = Some((v, model.clone()));
                log.best_epoch = Some(epoch);
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.patience {
                    log.stopped_early = true;
                    break;
                }
            }
        }
    }

    let model = match best {
        Some((_, m)) => m,
        None => {
            log.best_epoch = log.epochs.last().map(|e| e.epoch);
            model
        }
    };
    Ok(TrainedModel { model, log })
}

/// Signal and (for two-head models) second-head outputs over a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub y: Vec<f64>,
    pub w: Option<Vec<f64>>,
}

pub fn predict(model: &MlpModel, data: &Dataset) -> Result<Predictions> {
    let out = model.forward_batch(data.inputs().view())?;
    let y = out.column(0).to_vec();
    let w = (model.heads() > 1).then(|| out.column(1).to_vec());
    Ok(Predictions { y, w })
}

/// Mean `|y - y*|` of the signal head.
pub fn mean_abs_error(model: &MlpModel, data: &Dataset) -> Result<f64> {
    let p = predict(model, data)?;
    Ok(p.y
        .iter()
        .zip(data.targets())
        .map(|(y, t)| (y - t).abs())
        .sum::<f64>()
        / data.len() as f64)
}
