//! Batched inference and dataset evaluation.

use rayon::prelude::*;

use super::metrics::{argmax_stage, confusion, MetricsReport};
use crate::autodiff::{Tape, Tensor};
use crate::data::{make_batches, prepare, PreparedRecord, SleepRecord, Stage, StandardizationStats};
use crate::error::Result;
use crate::model::{split_records, Mode, Model, ModelInput};

/// Per-record `[epochs, 2]` probabilities, in input order. Batches run in
/// parallel; each uses its own tape.
pub fn predict_prepared(model: &Model, records: &[PreparedRecord], batch_size: usize) -> Result<Vec<Tensor>> {
    let batches = make_batches(records, batch_size)?;
    let per_batch = batches
        .par_iter()
        .map(|b| {
            let mut tape = Tape::new();
            let out = model.forward(
                &mut tape,
                ModelInput {
                    signals: &b.inputs,
                    lengths: &b.lengths,
                },
                &mut Mode::Infer,
            )?;
            let probs = split_records(tape.value(out.probs), &out.layout);
            Ok(b.indices.iter().copied().zip(probs).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = vec![None; records.len()];
    for (i, p) in per_batch.into_iter().flatten() {
        out[i] = Some(p);
    }
    Ok(out.into_iter().map(|p| p.expect("every record lands in one batch")).collect())
}

/// Argmax stage per row of a `[epochs, 2]` probability matrix.
pub fn predicted_stages(probs: &Tensor) -> Vec<Stage> {
    probs.data().chunks(2).map(|r| argmax_stage(r[0], r[1])).collect()
}

/// Per-patient report over already prepared records.
pub fn evaluate_prepared(model: &Model, records: &[PreparedRecord], batch_size: usize) -> Result<MetricsReport> {
    let probs = predict_prepared(model, records, batch_size)?;
    let rows = records
        .iter()
        .zip(&probs)
        .map(|(r, p)| Ok((r.subject_id.clone(), confusion(&predicted_stages(p), &r.labels, None)?)))
        .collect::<Result<Vec<_>>>()?;
    MetricsReport::from_counts(rows)
}

/// Repairs and standardizes `records` with `stats`, then evaluates them.
pub fn evaluate_dataset(
    model: &Model,
    stats: &StandardizationStats,
    records: &[SleepRecord],
    batch_size: usize,
) -> Result<MetricsReport> {
    evaluate_prepared(model, &prepare(records, stats)?, batch_size)
}

/// Mean per-patient accuracy, the model-selection score.
pub fn mean_accuracy(model: &Model, records: &[PreparedRecord], batch_size: usize) -> Result<f64> {
    Ok(evaluate_prepared(model, records, batch_size)?.average.acc.unwrap_or(0.0))
}
