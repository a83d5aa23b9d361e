//! Seeded mini-batch training with Adam, validation-driven model selection and
//! checkpointing.

mod adam;
mod step;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{TrainingView, VideoSample};
use crate::error::{Error, Result};
use crate::losses::{LossBreakdown, LossWeights};
use crate::metrics::{evaluate_split, EvalReport};
use crate::model::{forward, save_checkpoint, ModelConfig, ModelParams, PredictionTrace};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use step::{batch_gradients, BatchOutcome};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Validate every this many epochs (and after the last one).
    pub eval_every: usize,
    /// Where `best/` and `last/` checkpoints go; in-memory only when unset.
    pub checkpoint_dir: Option<PathBuf>,
    pub loss: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch_size: 32,
            epochs: 100,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            eval_every: 1,
            checkpoint_dir: None,
            loss: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.eval_every == 0 {
            return Err(Error::Config(format!(
                "batch_size {}, epochs {} and eval_every {} must be at least 1",
                self.batch_size, self.epochs, self.eval_every
            )));
        }
        let unit = |b: f64| (0.0..1.0).contains(&b);
        if !unit(self.beta1) || !unit(self.beta2) || !(self.eps > 0.0) {
            return Err(Error::Config(format!(
                "invalid Adam constants beta1 {} beta2 {} eps {}",
                self.beta1, self.beta2, self.eps
            )));
        }
        self.loss.validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            round_to_f32: true,
        }
    }
}

/// One optimisation step in the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub loss: LossBreakdown,
    /// Validation mAP, on the last step of a validated epoch.
    pub val_map: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub adam: AdamState,
    pub best_val_map: Option<f64>,
    pub best_epoch: Option<usize>,
    pub best_checkpoint: Option<PathBuf>,
    pub history: Vec<LogRow>,
}

impl TrainState {
    pub const LOG_HEADER: &'static str = "step,epoch,mil,smooth,con,total,val_mAP";

    pub fn step(&self) -> u64 {
        self.adam.step
    }

    pub fn log_csv(&self) -> String {
        let mut out = String::from(Self::LOG_HEADER);
        out.push('\n');
        for row in &self.history {
            let l = &row.loss;
            let val = row.val_map.map_or(String::new(), |v| v.to_string());
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                l.step, row.epoch, l.mil, l.smooth, l.con, l.total, val
            );
        }
        out
    }

    pub fn write_log(&self, path: &Path) -> Result<()> {
        fs::write(path, self.log_csv()).map_err(|e| Error::io(path, e))
    }

    /// Mean total loss of each epoch, in order.
    pub fn epoch_losses(&self) -> Vec<f64> {
        let mut out: Vec<(usize, f64, usize)> = Vec::new();
        for row in &self.history {
            match out.last_mut() {
                Some((e, sum, n)) if *e == row.epoch => {
                    *sum += row.loss.total;
                    *n += 1;
                }
                _ => out.push((row.epoch, row.loss.total, 1)),
            }
        }
        out.into_iter().map(|(_, s, n)| s / n as f64).collect()
    }
}

pub struct TrainOutcome {
    /// Best parameters by validation mAP, or the final ones without validation.
    pub params: ModelParams,
    pub final_params: ModelParams,
    pub state: TrainState,
}

/// Forward pass over every sample, in parallel; order follows `samples`.
pub fn predict_split(
    samples: &[VideoSample],
    params: &ModelParams,
    cfg: &ModelConfig,
    k_div: usize,
) -> Result<Vec<PredictionTrace>> {
    samples
        .par_iter()
        .map(|s| forward(&s.features, params, cfg, k_div))
        .collect()
}

/// Predicts and scores a labelled split.
pub fn evaluate_model(
    samples: &[VideoSample],
    params: &ModelParams,
    cfg: &ModelConfig,
    k_div: usize,
) -> Result<EvalReport> {
    let traces = predict_split(samples, params, cfg, k_div)?;
    evaluate_split(samples, &traces)
}

fn validation_map(
    val: &[VideoSample],
    params: &ModelParams,
    cfg: &ModelConfig,
    k_div: usize,
) -> Result<Option<f64>> {
    if val.is_empty() {
        return Ok(None);
    }
    match evaluate_model(val, params, cfg, k_div) {
        Ok(r) => Ok(Some(r.map)),
        Err(Error::UndefinedMetric(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

fn contrastive_seed(seed: u64, step: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ step
}

/// Trains from a fresh initialisation of `model_cfg`.
pub fn train(
    train_set: &[VideoSample],
    val: &[VideoSample],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let params = ModelParams::init(model_cfg)?;
    train_from(params, train_set, val, model_cfg, cfg)
}

/// Trains starting from `params`.
///
/// The training split is reduced to [`TrainingView`]s up front; only the
/// validation split is scored against frame annotations.
pub fn train_from(
    mut params: ModelParams,
    train_set: &[VideoSample],
    val: &[VideoSample],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    params.audit(model_cfg)?;
    if train_set.is_empty() {
        return Err(Error::EmptyInput("training split".into()));
    }
    let views: Vec<TrainingView<'_>> = train_set.iter().map(VideoSample::training_view).collect();
    let adam_cfg = cfg.adam();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..views.len()).collect();
    let mut state = TrainState {
        adam: AdamState::new(&params),
        best_val_map: None,
        best_epoch: None,
        best_checkpoint: None,
        history: Vec::new(),
    };
    let mut best_params: Option<ModelParams> = None;
    let mut last_good: Option<PathBuf> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<TrainingView<'_>> = chunk.iter().map(|&i| views[i]).collect();
            let step = state.adam.step + 1;
            let diverged = || Error::Diverged {
                step,
                last_good: last_good.clone(),
            };
            let outcome = match batch_gradients(
                &params,
                model_cfg,
                &cfg.loss,
                &batch,
                step,
                contrastive_seed(cfg.seed, step),
            ) {
                Ok(o) => o,
                Err(Error::NonFinite { .. }) => return Err(diverged()),
                Err(e) => return Err(e),
            };
            if !outcome.loss.total.is_finite() {
                return Err(diverged());
            }
            match adam_step(&mut params, &outcome.grads, &mut state.adam, &adam_cfg) {
                Ok(()) => {}
                Err(Error::NonFinite { .. }) => return Err(diverged()),
                Err(e) => return Err(e),
            }
            state.history.push(LogRow {
                epoch,
                loss: outcome.loss,
                val_map: None,
            });
        }

        if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            let map = validation_map(val, &params, model_cfg, cfg.loss.k_div)?;
            if let Some(row) = state.history.last_mut() {
                row.val_map = map;
            }
            if let Some(dir) = &cfg.checkpoint_dir {
                let last = dir.join("last");
                save_checkpoint(&last, &params, model_cfg)?;
                last_good = Some(last);
            }
            if let Some(m) = map {
                if state.best_val_map.is_none_or(|b| m > b) {
                    state.best_val_map = Some(m);
                    state.best_epoch = Some(epoch);
                    if let Some(dir) = &cfg.checkpoint_dir {
                        let best = dir.join("best");
                        save_checkpoint(&best, &params, model_cfg)?;
                        state.best_checkpoint = Some(best);
                    }
                    best_params = Some(params.clone());
                }
            }
        }
    }

    Ok(TrainOutcome {
        params: best_params.unwrap_or_else(|| params.clone()),
        final_params: params,
        state,
    })
}
