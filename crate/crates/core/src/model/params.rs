//! Named parameter store and its seeded initialization.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{FrontEndKind, ModelConfig};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Role of a stored tensor; decides optimizer treatment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    /// Convolution kernel or projection matrix; receives L2 decay.
    Weight,
    Bias,
    /// Normalization scale or shift.
    NormAffine,
    /// Batch-norm running statistic; not trained.
    Buffer,
}

impl ParamKind {
    pub fn trainable(self) -> bool {
        self != ParamKind::Buffer
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub kind: ParamKind,
    pub tensor: Tensor,
}

/// Ordered map from parameter path (e.g. `tcn.block2.conv1.weight`) to
/// tensor. Order is the construction order and is stable.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelParameters {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
}

impl ModelParameters {
    pub fn insert(&mut self, name: impl Into<String>, kind: ParamKind, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::contract(format!("duplicate parameter {name}")));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(ParamEntry { name, kind, tensor });
        Ok(())
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.position(name).map(|i| &self.entries[i].tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.position(name).map(|i| &mut self.entries[i].tensor)
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.entries[i].tensor
    }

    /// Number of trainable scalars (buffers excluded).
    pub fn trainable_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind.trainable())
            .map(|e| e.tensor.numel())
            .sum()
    }

    /// Records every entry on `tape`: trainable entries as leaves when
    /// `track` is set, everything else as constants.
    pub fn bind(&self, tape: &mut Tape, track: bool) -> BoundParams {
        let vars = self
            .entries
            .iter()
            .map(|e| {
                if track && e.kind.trainable() {
                    tape.leaf(e.tensor.clone())
                } else {
                    tape.constant(e.tensor.clone())
                }
            })
            .collect();
        BoundParams { vars }
    }
}

/// Tape handles for a [`ModelParameters`], index-aligned with its entries.
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub vars: Vec<Var>,
}

impl BoundParams {
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }
}

/// Name lookup over bound parameters.
pub(crate) struct ParamView<'a> {
    pub params: &'a ModelParameters,
    pub bound: &'a BoundParams,
}

impl ParamView<'_> {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.params
            .position(name)
            .map(|i| self.bound.vars[i])
            .ok_or_else(|| Error::contract(format!("missing parameter {name}")))
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::contract(format!("missing parameter {name}")))
    }
}

struct Init {
    rng: ChaCha8Rng,
    params: ModelParameters,
}

impl Init {
    /// Uniform in `±gain*sqrt(3/fan_in)`.
    fn weight(&mut self, name: String, shape: &[usize], fan_in: usize, gain: f64) -> Result<()> {
        let bound = gain * (3.0 / fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.rng.random_range(-bound..=bound)).collect();
        self.params
            .insert(name, ParamKind::Weight, Tensor::new(shape.to_vec(), data)?)
    }

    fn zeros(&mut self, name: String, shape: &[usize]) -> Result<()> {
        self.params.insert(name, ParamKind::Bias, Tensor::zeros(shape))
    }

    fn norm(&mut self, prefix: &str, dim: usize) -> Result<()> {
        self.params
            .insert(format!("{prefix}.gamma"), ParamKind::NormAffine, Tensor::ones(&[dim]))?;
        self.params
            .insert(format!("{prefix}.beta"), ParamKind::NormAffine, Tensor::zeros(&[dim]))
    }

    fn batch_norm(&mut self, prefix: &str, dim: usize) -> Result<()> {
        self.norm(prefix, dim)?;
        self.params.insert(
            format!("{prefix}.running_mean"),
            ParamKind::Buffer,
            Tensor::zeros(&[dim]),
        )?;
        self.params.insert(
            format!("{prefix}.running_var"),
            ParamKind::Buffer,
            Tensor::ones(&[dim]),
        )
    }
}

const RELU_GAIN: f64 = std::f64::consts::SQRT_2;

/// Builds the full parameter set for `config`: convolution and linear
/// weights uniform with fan-in scaling, zero biases, identity norm affines.
pub fn init_parameters(config: &ModelConfig, seed: u64) -> Result<ModelParameters> {
    config.validate()?;
    let mut init = Init {
        rng: ChaCha8Rng::seed_from_u64(seed),
        params: ModelParameters::default(),
    };
    let d = config.d_model;

    match config.front_end {
        FrontEndKind::Tcn => {
            let mut c_in = 1;
            for (b, spec) in config.blocks.iter().enumerate() {
                let p = format!("tcn.block{}", b + 1);
                let c = spec.conv1.out_channels;
                let k1 = spec.conv1.kernel_size;
                init.weight(format!("{p}.conv1.weight"), &[c, c_in, k1], c_in * k1, RELU_GAIN)?;
                init.batch_norm(&format!("{p}.bn1"), c)?;
                let k2 = spec.conv2.kernel_size;
                init.weight(format!("{p}.conv2.weight"), &[c, c, k2], c * k2, RELU_GAIN)?;
                init.batch_norm(&format!("{p}.bn2"), c)?;
                if c_in != c || spec.conv2.stride != 1 {
                    init.weight(format!("{p}.skip.weight"), &[c, c_in, 1], c_in, 1.0)?;
                    init.zeros(format!("{p}.skip.bias"), &[c])?;
                }
                c_in = c;
            }
        }
        FrontEndKind::Cnn => {
            let mut c_in = 1;
            for (b, spec) in config.blocks.iter().enumerate() {
                let p = format!("cnn.layer{}", b + 1);
                let (c, k) = (spec.conv2.out_channels, spec.conv2.kernel_size);
                init.weight(format!("{p}.conv.weight"), &[c, c_in, k], c_in * k, RELU_GAIN)?;
                init.batch_norm(&format!("{p}.bn"), c)?;
                c_in = c;
            }
        }
        FrontEndKind::Fnn => {
            let w = config.epoch_len;
            init.weight("fnn.weight".into(), &[w, d], w, 1.0)?;
            init.zeros("fnn.bias".into(), &[d])?;
        }
    }

    let dk = config.d_k();
    for l in 0..config.encoder_layers {
        let p = format!("enc{l}");
        for h in 0..config.heads {
            for m in ["Wq", "Wk", "Wv"] {
                init.weight(format!("{p}.head{h}.{m}"), &[d, dk], d, 1.0)?;
            }
        }
        init.weight(format!("{p}.W0"), &[d, d], d, 1.0)?;
        init.norm(&format!("{p}.ln1"), d)?;
        init.weight(format!("{p}.ffn.W1"), &[d, config.d_ffn], d, RELU_GAIN)?;
        init.zeros(format!("{p}.ffn.b1"), &[config.d_ffn])?;
        init.weight(format!("{p}.ffn.W2"), &[config.d_ffn, d], config.d_ffn, 1.0)?;
        init.zeros(format!("{p}.ffn.b2"), &[d])?;
        init.norm(&format!("{p}.ln2"), d)?;
    }

    init.weight("dec.W1".into(), &[d, d], d, RELU_GAIN)?;
    init.zeros("dec.b1".into(), &[d])?;
    init.weight("dec.W2".into(), &[d, config.n_classes], d, 1.0)?;
    init.zeros("dec.b2".into(), &[config.n_classes])?;
    Ok(init.params)
}
