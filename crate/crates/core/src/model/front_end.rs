//! Representation front-ends mapping a `[n, 1, L]` heart-rate batch to one
//! `d_model` feature row per scoring epoch, packed as `[n * L/epoch_len, d_model]`.
//!
//! Padded positions are forced back to zero after every sublayer, so a
//! record's features do not depend on how much padding its batch carries.

use super::config::{FrontEndKind, ModelConfig};
use super::layers::{dropout, length_mask, linear, Mode};
use super::params::ParamView;
use crate::autodiff::{BatchNormMode, BatchStats, ConvGeometry, Padding, Tape, Tensor, Var};
use crate::error::{Error, Result};

pub(crate) struct FrontEndOutput {
    pub features: Var,
    pub batch_stats: Vec<(String, BatchStats)>,
}

/// Masked batch norm that records the measured statistics in training mode.
fn batch_norm(
    tape: &mut Tape,
    x: Var,
    prefix: &str,
    view: &ParamView<'_>,
    mask: &[f64],
    mode: &Mode<'_>,
    stats: &mut Vec<(String, BatchStats)>,
) -> Result<Var> {
    let gamma = view.var(&format!("{prefix}.gamma"))?;
    let beta = view.var(&format!("{prefix}.beta"))?;
    if mode.is_train() {
        let (y, s) = tape.batch_norm(x, gamma, beta, mask, BatchNormMode::Batch)?;
        stats.extend(s.map(|s| (prefix.to_string(), s)));
        Ok(y)
    } else {
        let mean = view.tensor(&format!("{prefix}.running_mean"))?.data();
        let var = view.tensor(&format!("{prefix}.running_var"))?.data();
        let (y, _) = tape.batch_norm(x, gamma, beta, mask, BatchNormMode::Running { mean, var })?;
        Ok(y)
    }
}

/// Multiplies `x: [n, c, len]` by the validity mask broadcast over channels.
fn zero_padding(tape: &mut Tape, x: Var, valid: &[usize]) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let (c, len) = (shape[1], shape[2]);
    if valid.iter().all(|&v| v == len) {
        return Ok(x);
    }
    let data: Vec<f64> = valid
        .iter()
        .flat_map(|&v| {
            (0..c).flat_map(move |_| (0..len).map(move |i| if i < v { 1.0 } else { 0.0 }))
        })
        .collect();
    let m = tape.constant(Tensor::new(shape, data)?);
    tape.mul(x, m)
}

fn check_lengths(config: &ModelConfig, padded: usize, lengths: &[usize]) -> Result<()> {
    let e = config.epoch_len;
    if !padded.is_multiple_of(e) {
        return Err(Error::contract(format!(
            "signal length {padded} is not a multiple of the {e}-sample epoch"
        )));
    }
    for &l in lengths {
        if l == 0 || l % e != 0 || l > padded {
            return Err(Error::contract(format!(
                "record length {l} must be a positive multiple of {e} not exceeding {padded}"
            )));
        }
    }
    Ok(())
}

/// `[n, c, len]` channel-major features to packed `[n*len, c]` rows.
fn to_rows(tape: &mut Tape, h: Var) -> Result<Var> {
    let shape = tape.shape(h).to_vec();
    let t = tape.transpose(h)?;
    tape.reshape(t, &[shape[0] * shape[2], shape[1]])
}

pub(crate) fn front_end(
    tape: &mut Tape,
    x: Var,
    lengths: &[usize],
    config: &ModelConfig,
    view: &ParamView<'_>,
    mode: &mut Mode<'_>,
) -> Result<FrontEndOutput> {
    let shape = tape.shape(x).to_vec();
    let [n, 1, padded] = shape[..] else {
        return Err(Error::dim(format!("front-end input must be [n, 1, L], got {shape:?}")));
    };
    if lengths.len() != n {
        return Err(Error::dim(format!("{} lengths for {n} records", lengths.len())));
    }
    check_lengths(config, padded, lengths)?;
    match config.front_end {
        FrontEndKind::Tcn => tcn(tape, x, lengths, config, view, mode),
        FrontEndKind::Cnn => cnn(tape, x, lengths, config, view, mode),
        FrontEndKind::Fnn => fnn(tape, x, lengths, config, view),
    }
}

fn tcn(
    tape: &mut Tape,
    x: Var,
    lengths: &[usize],
    config: &ModelConfig,
    view: &ParamView<'_>,
    mode: &mut Mode<'_>,
) -> Result<FrontEndOutput> {
    let mut stats = Vec::new();
    let mut h = x;
    let mut len = tape.shape(x)[2];
    let mut valid = lengths.to_vec();
    for (b, spec) in config.blocks.iter().enumerate() {
        let p = format!("tcn.block{}", b + 1);
        let (c1, c2) = (spec.conv1, spec.conv2);

        let mask = length_mask(&valid, len);
        let w1 = view.var(&format!("{p}.conv1.weight"))?;
        let geom1 = ConvGeometry::new(c1.dilation, 1, Padding::same(c1.kernel_size, c1.dilation));
        let y = tape.conv1d(h, w1, None, geom1)?;
        let y = batch_norm(tape, y, &format!("{p}.bn1"), view, &mask, mode, &mut stats)?;
        let y = tape.relu(y);
        let y = dropout(tape, y, spec.dropout, mode)?;

        let w2 = view.var(&format!("{p}.conv2.weight"))?;
        let geom2 = ConvGeometry::new(
            c2.dilation,
            c2.stride,
            Padding::same(c2.kernel_size, c2.dilation),
        );
        let y = tape.conv1d(y, w2, None, geom2)?;
        let out_len = tape.shape(y)[2];
        let out_valid: Vec<usize> = valid.iter().map(|v| v.div_ceil(c2.stride)).collect();
        let mask = length_mask(&out_valid, out_len);
        let y = batch_norm(tape, y, &format!("{p}.bn2"), view, &mask, mode, &mut stats)?;
        let y = tape.relu(y);
        let y = dropout(tape, y, spec.dropout, mode)?;

        let skip = match view.params.position(&format!("{p}.skip.weight")) {
            Some(_) => {
                let ws = view.var(&format!("{p}.skip.weight"))?;
                let bs = view.var(&format!("{p}.skip.bias"))?;
                let geom = ConvGeometry::new(1, c2.stride, Padding::symmetric(0));
                let s = tape.conv1d(h, ws, Some(bs), geom)?;
                zero_padding(tape, s, &out_valid)?
            }
            None => h,
        };
        h = tape.add(y, skip)?;
        len = out_len;
        valid = out_valid;
    }
    Ok(FrontEndOutput {
        features: to_rows(tape, h)?,
        batch_stats: stats,
    })
}

fn cnn(
    tape: &mut Tape,
    x: Var,
    lengths: &[usize],
    config: &ModelConfig,
    view: &ParamView<'_>,
    mode: &mut Mode<'_>,
) -> Result<FrontEndOutput> {
    let mut stats = Vec::new();
    let mut h = x;
    let mut valid = lengths.to_vec();
    for (b, spec) in config.blocks.iter().enumerate() {
        let p = format!("cnn.layer{}", b + 1);
        let (k, s) = (spec.conv2.kernel_size, spec.conv2.stride);
        let w = view.var(&format!("{p}.conv.weight"))?;
        let y = tape.conv1d(h, w, None, ConvGeometry::new(1, s, Padding::same(k, 1)))?;
        let y = dropout(tape, y, config.dropout, mode)?;
        valid = valid.iter().map(|v| v.div_ceil(s)).collect();
        let mask = length_mask(&valid, tape.shape(y)[2]);
        let y = batch_norm(tape, y, &format!("{p}.bn"), view, &mask, mode, &mut stats)?;
        h = tape.relu(y);
    }
    Ok(FrontEndOutput {
        features: to_rows(tape, h)?,
        batch_stats: stats,
    })
}

fn fnn(
    tape: &mut Tape,
    x: Var,
    lengths: &[usize],
    config: &ModelConfig,
    view: &ParamView<'_>,
) -> Result<FrontEndOutput> {
    let shape = tape.shape(x).to_vec();
    let e = config.epoch_len;
    let epochs = shape[2] / e;
    let windows = tape.reshape(x, &[shape[0] * epochs, e])?;
    let w = view.var("fnn.weight")?;
    let b = view.var("fnn.bias")?;
    let y = linear(tape, windows, w, Some(b))?;
    let mut y = tape.tanh(y);
    if lengths.iter().any(|&l| l / e != epochs) {
        let d = config.d_model;
        let data: Vec<f64> = lengths
            .iter()
            .flat_map(|&l| {
                (0..epochs).flat_map(move |i| std::iter::repeat_n(if i < l / e { 1.0 } else { 0.0 }, d))
            })
            .collect();
        let m = tape.constant(Tensor::new(vec![shape[0] * epochs, d], data)?);
        y = tape.mul(y, m)?;
    }
    Ok(FrontEndOutput {
        features: y,
        batch_stats: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::init_parameters;

    fn run(config: &ModelConfig, signal: Vec<f64>, bias: Option<Vec<f64>>) -> Tensor {
        let mut params = init_parameters(config, 3).unwrap();
        if let Some(b) = bias {
            *params.get_mut("fnn.bias").unwrap() = Tensor::vector(b);
        }
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, false);
        let view = ParamView {
            params: &params,
            bound: &bound,
        };
        let len = signal.len();
        let x = tape.constant(Tensor::new(vec![1, 1, len], signal).unwrap());
        let out = front_end(&mut tape, x, &[len], config, &view, &mut Mode::Infer).unwrap();
        tape.value(out.features).clone()
    }

    #[test]
    fn every_variant_emits_one_row_per_epoch() {
        for kind in [FrontEndKind::Tcn, FrontEndKind::Cnn, FrontEndKind::Fnn] {
            let config = ModelConfig::tiny().with_front_end(kind);
            for len in [30, 60, 900] {
                let signal = (0..len).map(|i| (i as f64 * 0.1).sin()).collect();
                assert_eq!(run(&config, signal, None).shape(), &[len / 30, 16], "{kind} L={len}");
            }
        }
    }

    #[test]
    fn fnn_on_zero_input_is_tanh_of_bias() {
        let config = ModelConfig::tiny().with_front_end(FrontEndKind::Fnn);
        let bias: Vec<f64> = (0..16).map(|i| i as f64 / 8.0 - 1.0).collect();
        let out = run(&config, vec![0.0; 90], Some(bias.clone()));
        assert_eq!(out.shape(), &[3, 16]);
        for row in out.data().chunks(16) {
            for (v, b) in row.iter().zip(&bias) {
                assert_eq!(*v, b.tanh());
            }
        }
    }

    #[test]
    fn tcn_on_zero_input_is_finite() {
        let out = run(&ModelConfig::default(), vec![0.0; 300], None);
        assert_eq!(out.shape(), &[10, 128]);
        assert!(out.is_finite());
    }

    #[test]
    fn ragged_lengths_are_rejected() {
        let config = ModelConfig::tiny();
        let params = init_parameters(&config, 0).unwrap();
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, false);
        let view = ParamView {
            params: &params,
            bound: &bound,
        };
        let x = tape.constant(Tensor::zeros(&[1, 1, 45]));
        assert!(front_end(&mut tape, x, &[45], &config, &view, &mut Mode::Infer).is_err());
    }
}
