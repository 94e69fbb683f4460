//! Class-weighted focal loss over scored epochs.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::data::Stage;
use crate::error::{Error, Result};

/// Floor applied to `p_t` before the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Weight of the Wake class; Sleep gets `1 - alpha`.
    pub alpha: f64,
    /// Focusing exponent on `1 - p_t`.
    pub gamma: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { alpha: 0.4, gamma: 5.0 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config(format!("loss alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::config(format!("loss gamma must be finite and >= 0, got {}", self.gamma)));
        }
        Ok(())
    }

    pub fn class_weight(&self, stage: Stage) -> f64 {
        match stage {
            Stage::Wake => self.alpha,
            Stage::Sleep => 1.0 - self.alpha,
        }
    }

    /// Loss of one epoch whose true class has probability `p_t`.
    pub fn term(&self, p_t: f64, stage: Stage) -> f64 {
        let focus = if self.gamma == 0.0 { 1.0 } else { (1.0 - p_t).powf(self.gamma) };
        let floored = if p_t < PROB_FLOOR { PROB_FLOOR } else { p_t };
        -self.class_weight(stage) * focus * floored.ln()
    }
}

/// Mean focal loss over the unmasked rows of `probs: [rows, 2]`, whose
/// columns are (Sleep, Wake).
pub fn focal_loss(tape: &mut Tape, probs: Var, labels: &[Stage], epoch_mask: &[bool], cfg: &LossConfig) -> Result<Var> {
    let shape = tape.shape(probs).to_vec();
    if shape.len() != 2 || shape[1] != 2 {
        return Err(Error::dim(format!("probabilities must be [rows, 2], got {shape:?}")));
    }
    let rows = shape[0];
    if labels.len() != rows || epoch_mask.len() != rows {
        return Err(Error::dim(format!(
            "{rows} probability rows but {} labels and {} mask entries",
            labels.len(),
            epoch_mask.len()
        )));
    }
    let scored = epoch_mask.iter().filter(|&&m| m).count();
    if scored == 0 {
        return Err(Error::contract("focal loss over zero scored epochs"));
    }

    let mut onehot = vec![0.0; rows * 2];
    let mut weights = vec![0.0; rows];
    for (r, (&label, &valid)) in labels.iter().zip(epoch_mask).enumerate() {
        onehot[r * 2 + label.code()] = 1.0;
        if valid {
            weights[r] = -cfg.class_weight(label) / scored as f64;
        }
    }
    let onehot = tape.constant(Tensor::new(vec![rows, 2], onehot)?);
    let picked = tape.mul(probs, onehot)?;
    let p_t = tape.sum_last(picked)?;
    let floored = tape.clamp_min(p_t, PROB_FLOOR);
    let mut per_epoch = tape.log(floored);
    if cfg.gamma != 0.0 {
        let miss = tape.scale(p_t, -1.0);
        let miss = tape.add_scalar(miss, 1.0);
        // rounding can push p_t a hair above 1
        let miss = tape.clamp_min(miss, 0.0);
        let focus = tape.powf(miss, cfg.gamma);
        per_epoch = tape.mul(focus, per_epoch)?;
    }
    let w = tape.constant(Tensor::vector(weights));
    let weighted = tape.mul(per_epoch, w)?;
    Ok(tape.sum(weighted))
}
