use super::attention::{encoder_layer, EncoderWeights, SequenceLayout};
use super::config::ModelConfig;
use super::front_end::front_end;
use super::layers::{feed_forward, Mode};
use super::params::{init_parameters, BoundParams, ModelParameters, ParamKind, ParamView};
use super::positional::positional_encoding;
use crate::autodiff::{BatchStats, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Running-statistics momentum of batch normalization.
pub const BN_MOMENTUM: f64 = 0.1;

/// A zero-padded batch of standardized heart-rate signals.
#[derive(Debug, Clone, Copy)]
pub struct ModelInput<'a> {
    /// `[n, 1, L_pad]`.
    pub signals: &'a Tensor,
    /// Valid samples per record; multiples of the epoch length.
    pub lengths: &'a [usize],
}

pub struct ForwardOutput {
    /// Packed `[n * E_pad, 2]` class probabilities, columns (Sleep, Wake).
    pub probs: Var,
    pub layout: SequenceLayout,
    /// Attention matrices, indexed `[layer][head][record]`.
    pub attention: Vec<Vec<Vec<Var>>>,
    /// Batch statistics measured in training mode, by batch-norm prefix.
    pub batch_stats: Vec<(String, BatchStats)>,
}

/// Front-end, positional encoding, encoder stack and decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: ModelParameters,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = init_parameters(&config, seed)?;
        Ok(Self { config, params })
    }

    /// Reassembles a model, checking that `params` has exactly the names,
    /// kinds and shapes `config` implies.
    pub fn from_parts(config: ModelConfig, params: ModelParameters) -> Result<Self> {
        let expected = init_parameters(&config, 0)?;
        if expected.len() != params.len() {
            return Err(Error::ConfigMismatch(format!(
                "config implies {} tensors, found {}",
                expected.len(),
                params.len()
            )));
        }
        for e in expected.entries() {
            match params.position(&e.name).map(|i| &params.entries()[i]) {
                Some(p) if p.kind == e.kind && p.tensor.shape() == e.tensor.shape() => {}
                Some(p) => {
                    return Err(Error::ConfigMismatch(format!(
                        "{}: expected {:?} {:?}, found {:?} {:?}",
                        e.name,
                        e.kind,
                        e.tensor.shape(),
                        p.kind,
                        p.tensor.shape()
                    )))
                }
                None => return Err(Error::ConfigMismatch(format!("missing tensor {}", e.name))),
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ModelParameters {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParameters {
        &mut self.params
    }

    pub fn into_parts(self) -> (ModelConfig, ModelParameters) {
        (self.config, self.params)
    }

    /// Binds the parameters (as leaves in training mode) and runs the
    /// network.
    pub fn forward(&self, tape: &mut Tape, input: ModelInput<'_>, mode: &mut Mode<'_>) -> Result<ForwardOutput> {
        let bound = self.params.bind(tape, mode.is_train());
        self.forward_bound(tape, &bound, input, mode)
    }

    /// Runs the network on already bound parameters.
    pub fn forward_bound(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        input: ModelInput<'_>,
        mode: &mut Mode<'_>,
    ) -> Result<ForwardOutput> {
        let view = ParamView {
            params: &self.params,
            bound,
        };
        let shape = input.signals.shape();
        if shape.len() != 3 || shape[1] != 1 {
            return Err(Error::dim(format!("signals must be [n, 1, L], got {shape:?}")));
        }
        let epoch = self.config.epoch_len;
        let padded_epochs = shape[2] / epoch;
        if padded_epochs > self.config.max_len {
            return Err(Error::contract(format!(
                "{padded_epochs} epochs exceed the model maximum of {}",
                self.config.max_len
            )));
        }
        let x = tape.constant(input.signals.clone());
        let fe = front_end(tape, x, input.lengths, &self.config, &view, mode)?;

        let d = self.config.d_model;
        let n = shape[0];
        let pe = positional_encoding(padded_epochs, d);
        let tiled = Tensor::new(vec![n * padded_epochs, d], pe.data().repeat(n))?;
        let pe = tape.constant(tiled);
        let mut h = tape.add(fe.features, pe)?;

        let layout = SequenceLayout {
            padded_len: padded_epochs,
            valid: input.lengths.iter().map(|l| l / epoch).collect(),
        };
        let mut attention = Vec::with_capacity(self.config.encoder_layers);
        for l in 0..self.config.encoder_layers {
            let w = EncoderWeights::lookup(&view, l, self.config.heads)?;
            let (out, maps) = encoder_layer(tape, h, &w, &layout, self.config.dropout, mode)?;
            h = out;
            attention.push(maps);
        }

        let logits = feed_forward(
            tape,
            h,
            view.var("dec.W1")?,
            view.var("dec.b1")?,
            view.var("dec.W2")?,
            view.var("dec.b2")?,
        )?;
        let probs = tape.softmax(logits, 1)?;
        Ok(ForwardOutput {
            probs,
            layout,
            attention,
            batch_stats: fe.batch_stats,
        })
    }

    /// Folds measured batch statistics into the running estimates.
    pub fn apply_batch_stats(&mut self, stats: &[(String, BatchStats)]) -> Result<()> {
        for (prefix, s) in stats {
            for (suffix, measured) in [("running_mean", &s.mean), ("running_var", &s.var_unbiased)] {
                let name = format!("{prefix}.{suffix}");
                let t = self
                    .params
                    .get_mut(&name)
                    .ok_or_else(|| Error::contract(format!("missing buffer {name}")))?;
                for (r, m) in t.data_mut().iter_mut().zip(measured) {
                    *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
                }
            }
        }
        Ok(())
    }

    /// Inference on a single standardized record; returns `[E, 2]`.
    pub fn predict(&self, signal: &[f64]) -> Result<Tensor> {
        let signals = Tensor::new(vec![1, 1, signal.len()], signal.to_vec())?;
        let lengths = [signal.len()];
        let mut tape = Tape::new();
        let out = self.forward(
            &mut tape,
            ModelInput {
                signals: &signals,
                lengths: &lengths,
            },
            &mut Mode::Infer,
        )?;
        Ok(tape.value(out.probs).clone())
    }

    /// Whether parameter `index` receives L2 decay.
    pub fn decayed(&self, index: usize) -> bool {
        self.params.entries()[index].kind == ParamKind::Weight
    }
}

/// Per-record rows `[valid_epochs, 2]` of a packed probability matrix.
pub fn split_records(probs: &Tensor, layout: &SequenceLayout) -> Vec<Tensor> {
    layout
        .valid
        .iter()
        .enumerate()
        .map(|(n, &v)| probs.rows(n * layout.padded_len, n * layout.padded_len + v))
        .collect()
}
