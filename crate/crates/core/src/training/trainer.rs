//! Epoch loop with best-validation model selection.

use std::path::PathBuf;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, CheckpointMeta};
use super::loss::{focal_loss, LossConfig};
use super::optim::{adam_step, AdamState, OptimizerConfig};
use crate::autodiff::Tape;
use crate::data::{batch_order, make_batches, prepare, repair_all, SleepRecord, StandardizationStats, DEFAULT_BATCH_SIZE};
use crate::error::{Error, Result};
use crate::eval::mean_accuracy;
use crate::model::{Mode, Model, ModelInput};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Where to write the best checkpoint as soon as it improves.
    pub checkpoint: Option<PathBuf>,
    /// Progress is reported every this many epochs (0 silences it).
    pub report_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: DEFAULT_BATCH_SIZE,
            max_epochs: 500,
            seed: 0,
            checkpoint: None,
            report_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean focal loss per scored epoch over the training pass.
    pub train_loss: f64,
    /// Mean per-patient validation accuracy.
    pub val_acc: f64,
    /// Wall time of the epoch in seconds.
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the best validation epoch.
    pub best: Checkpoint,
    pub log: Vec<EpochLog>,
}

/// Everything a training run needs besides the data.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainSetup {
    pub loss: LossConfig,
    pub optimizer: OptimizerConfig,
    pub train: TrainConfig,
}

/// Trains `model` on `train`, selecting by accuracy on `val`.
///
/// Standardization is fitted on the repaired training signals. The
/// returned checkpoint holds the parameters and optimizer state after the
/// epoch with the highest validation accuracy (the earliest on ties); with
/// `max_epochs == 0` it is the untouched model, tagged epoch 0.
/// `on_epoch` sees each log line as soon as it is produced.
pub fn train(
    model: Model,
    train_set: &[SleepRecord],
    val_set: &[SleepRecord],
    setup: &TrainSetup,
    on_epoch: &mut dyn FnMut(&EpochLog) -> Result<()>,
) -> Result<TrainOutcome> {
    setup.loss.validate()?;
    setup.optimizer.validate()?;
    setup.train.validate()?;
    if train_set.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    if val_set.is_empty() {
        return Err(Error::Data("validation split is empty".into()));
    }
    let repaired = repair_all(train_set)?;
    let stats = StandardizationStats::fit(repaired.iter().map(Vec::as_slice))?;
    train_with_stats(model, stats, AdamState::default(), train_set, val_set, setup, on_epoch)
}

/// As [`train`], but with fixed standardization and (when non-empty)
/// resumed optimizer moments, e.g. from an initial checkpoint.
pub fn train_with_stats(
    mut model: Model,
    stats: StandardizationStats,
    optimizer: AdamState,
    train_set: &[SleepRecord],
    val_set: &[SleepRecord],
    setup: &TrainSetup,
    on_epoch: &mut dyn FnMut(&EpochLog) -> Result<()>,
) -> Result<TrainOutcome> {
    let cfg = &setup.train;
    let train_prepared = prepare(train_set, &stats)?;
    let val_prepared = prepare(val_set, &stats)?;
    let batches = make_batches(&train_prepared, cfg.batch_size)?;
    let mut state = if optimizer.m.len() == model.params().len() {
        optimizer
    } else {
        AdamState::new(model.params())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let snapshot = |model: &Model, state: &AdamState, epoch: usize, val_acc: f64| Checkpoint {
        model: model.clone(),
        standardization: stats,
        optimizer: state.clone(),
        meta: CheckpointMeta {
            epoch,
            val_acc: Some(val_acc),
            seed: cfg.seed,
        },
    };

    if cfg.max_epochs == 0 {
        let acc = mean_accuracy(&model, &val_prepared, cfg.batch_size)?;
        let best = snapshot(&model, &state, 0, acc);
        if let Some(path) = &cfg.checkpoint {
            best.save(path)?;
        }
        return Ok(TrainOutcome { best, log: Vec::new() });
    }

    let mut log = Vec::with_capacity(cfg.max_epochs);
    let mut best: Option<Checkpoint> = None;
    for epoch in 1..=cfg.max_epochs {
        let start = Instant::now();
        let mut loss_sum = 0.0;
        let mut scored = 0usize;
        for (k, &b) in batch_order(cfg.seed, epoch, batches.len()).iter().enumerate() {
            let batch = &batches[b];
            let mut tape = Tape::new();
            let bound = model.params().bind(&mut tape, true);
            let out = model.forward_bound(
                &mut tape,
                &bound,
                ModelInput {
                    signals: &batch.inputs,
                    lengths: &batch.lengths,
                },
                &mut Mode::Train(&mut rng),
            )?;
            let loss = focal_loss(&mut tape, out.probs, &batch.labels, &batch.epoch_mask, &setup.loss)?;
            let value = tape.value(loss).item()?;
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    batch: k,
                    value,
                    subjects: batch.subject_ids.join(", "),
                });
            }
            tape.backward(loss)?;
            let grads: Vec<_> = bound.vars.iter().map(|&v| tape.grad(v)).collect();
            adam_step(model.params_mut(), &grads, &mut state, &setup.optimizer)?;
            model.apply_batch_stats(&out.batch_stats)?;
            let n = batch.scored_epochs();
            loss_sum += value * n as f64;
            scored += n;
        }
        let val_acc = mean_accuracy(&model, &val_prepared, cfg.batch_size)?;
        let entry = EpochLog {
            epoch,
            train_loss: loss_sum / scored as f64,
            val_acc,
            seconds: start.elapsed().as_secs_f64(),
        };
        log.push(entry);
        on_epoch(&entry)?;
        if best.as_ref().is_none_or(|b| b.meta.val_acc.is_some_and(|a| val_acc > a)) {
            let ckpt = snapshot(&model, &state, epoch, val_acc);
            if let Some(path) = &cfg.checkpoint {
                ckpt.save(path)?;
            }
            best = Some(ckpt);
        }
    }
    Ok(TrainOutcome {
        best: best.expect("at least one epoch ran"),
        log,
    })
}
