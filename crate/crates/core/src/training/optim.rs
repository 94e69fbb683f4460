//! Adam with an L2 penalty folded into the gradient.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::{ModelParameters, ParamKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// L2 coefficient, applied to weight matrices and kernels only.
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.99,
            epsilon: 1e-8,
            weight_decay: 1e-3,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.weight_decay >= 0.0
            && self.weight_decay.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!(
                "optimizer needs lr > 0, betas in [0, 1), epsilon > 0, decay >= 0; got {self:?}"
            )))
        }
    }
}

/// First and second moments per parameter entry (empty for entries that
/// are not trained) and the step count.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ModelParameters) -> Self {
        let zeros = || {
            params
                .entries()
                .iter()
                .map(|e| if e.kind.trainable() { vec![0.0; e.tensor.numel()] } else { Vec::new() })
                .collect()
        };
        Self {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

/// One Adam update of `w` in place, `step` being the 1-based step number.
pub fn adam_update(cfg: &OptimizerConfig, step: u64, decay: bool, w: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]) {
    let c1 = 1.0 - cfg.beta1.powf(step as f64);
    let c2 = 1.0 - cfg.beta2.powf(step as f64);
    let lambda = if decay { cfg.weight_decay } else { 0.0 };
    for i in 0..w.len() {
        let g = g[i] + lambda * w[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        w[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
}

/// Applies one step to every trainable entry. `grads` is index-aligned
/// with the entries; a missing gradient counts as zero.
pub fn adam_step(params: &mut ModelParameters, grads: &[Option<&Tensor>], state: &mut AdamState, cfg: &OptimizerConfig) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::dim(format!(
            "{} parameters, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    for i in 0..params.len() {
        let kind = params.entries()[i].kind;
        if !kind.trainable() {
            continue;
        }
        let w = params.tensor_mut(i).data_mut();
        let zero;
        let g = match grads[i] {
            Some(g) if g.numel() == w.len() => g.data(),
            Some(g) => return Err(Error::dim(format!("gradient {i} has {} values for {}", g.numel(), w.len()))),
            None => {
                zero = vec![0.0; w.len()];
                &zero
            }
        };
        adam_update(cfg, state.step, kind == ParamKind::Weight, w, g, &mut state.m[i], &mut state.v[i]);
    }
    Ok(())
}
