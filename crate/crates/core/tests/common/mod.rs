//! Helpers and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use somnoflow::autodiff::{grad_check_many, Tape, Tensor, Var};
use somnoflow::data::{GenConfig, SleepRecord, Stage};
use somnoflow::model::{BoundParams, Mode, Model, ModelConfig, ModelInput};
use somnoflow::Result;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// `sum(y * r)` with a fixed random `r`; turns any tensor into a scalar
/// whose gradient with respect to `y` is `r`.
pub fn project(tape: &mut Tape, y: Var, r: &Tensor) -> Result<Var> {
    let c = tape.constant(r.clone());
    let p = tape.mul(y, c)?;
    Ok(tape.sum(p))
}

pub struct ConvCase {
    pub x: Vec<Vec<f64>>,
    /// `[c_out][c_in][k]`.
    pub w: Vec<Vec<Vec<f64>>>,
    pub bias: Vec<f64>,
    pub dilation: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvCase {
    pub fn out_len(&self) -> usize {
        let (l, k) = (self.x[0].len(), self.w[0][0].len());
        (l + 2 * self.padding - self.dilation * (k - 1) - 1) / self.stride + 1
    }

    /// Direct evaluation of the zero-padded cross-correlation.
    pub fn forward(&self) -> Vec<Vec<f64>> {
        let (c_in, l, k) = (self.x.len(), self.x[0].len(), self.w[0][0].len());
        let out = self.out_len();
        let mut y = vec![vec![0.0; out]; self.w.len()];
        for (co, row) in y.iter_mut().enumerate() {
            for (t, yv) in row.iter_mut().enumerate() {
                let mut acc = self.bias[co];
                for ci in 0..c_in {
                    for kk in 0..k {
                        let j = (t * self.stride + kk * self.dilation) as isize - self.padding as isize;
                        if j >= 0 && (j as usize) < l {
                            acc += self.w[co][ci][kk] * self.x[ci][j as usize];
                        }
                    }
                }
                *yv = acc;
            }
        }
        y
    }

    /// Gradients of `sum(y * gy)` with respect to x, w and bias, by the
    /// same loops.
    #[allow(clippy::type_complexity)]
    pub fn backward(&self, gy: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>, Vec<f64>) {
        let (c_in, l, k) = (self.x.len(), self.x[0].len(), self.w[0][0].len());
        let mut gx = vec![vec![0.0; l]; c_in];
        let mut gw = vec![vec![vec![0.0; k]; c_in]; self.w.len()];
        let mut gb = vec![0.0; self.w.len()];
        for co in 0..self.w.len() {
            for t in 0..self.out_len() {
                let g = gy[co][t];
                gb[co] += g;
                for ci in 0..c_in {
                    for kk in 0..k {
                        let j = (t * self.stride + kk * self.dilation) as isize - self.padding as isize;
                        if j >= 0 && (j as usize) < l {
                            gx[ci][j as usize] += g * self.w[co][ci][kk];
                            gw[co][ci][kk] += g * self.x[ci][j as usize];
                        }
                    }
                }
            }
        }
        (gx, gw, gb)
    }

    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        loop {
            let c_in = rng.random_range(1..=4);
            let c_out = rng.random_range(1..=4);
            let l = rng.random_range(1..=32);
            let k = rng.random_range(1..=5);
            let dilation = rng.random_range(1..=4);
            let stride = rng.random_range(1..=5);
            let padding = rng.random_range(0..=4);
            if dilation * (k - 1) + 1 > l + 2 * padding {
                continue;
            }
            let mut v = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() };
            let x = (0..c_in).map(|_| v(l)).collect();
            let w = (0..c_out).map(|_| (0..c_in).map(|_| v(k)).collect()).collect();
            let bias = v(c_out);
            return Self {
                x,
                w,
                bias,
                dilation,
                stride,
                padding,
            };
        }
    }
}

pub fn flat2(v: &[Vec<f64>]) -> Vec<f64> {
    v.iter().flatten().copied().collect()
}

pub fn flat3(v: &[Vec<Vec<f64>>]) -> Vec<f64> {
    v.iter().flatten().flatten().copied().collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Scaled dot-product attention evaluated with scalar loops: returns (output, attention).
pub fn attention_oracle(q: &Tensor, k: &Tensor, v: &Tensor, key_valid: &[bool]) -> (Vec<f64>, Vec<f64>) {
    let (l, dk) = (q.shape()[0], q.shape()[1]);
    let dv = v.shape()[1];
    let mut attn = vec![0.0; l * l];
    for i in 0..l {
        let mut scores = vec![f64::NEG_INFINITY; l];
        for j in 0..l {
            if key_valid[j] {
                let mut s = 0.0;
                for c in 0..dk {
                    s += q.at(i, c) * k.at(j, c);
                }
                scores[j] = s / (dk as f64).sqrt();
            }
        }
        let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
        for j in 0..l {
            attn[i * l + j] = (scores[j] - m).exp() / z;
        }
    }
    let mut out = vec![0.0; l * dv];
    for i in 0..l {
        for c in 0..dv {
            for j in 0..l {
                out[i * dv + c] += attn[i * l + j] * v.at(j, c);
            }
        }
    }
    (out, attn)
}

/// The d_model 16, 2-head, 1-layer configuration without dropout.
pub fn tiny_config() -> ModelConfig {
    ModelConfig::tiny().with_dropout(0.0)
}

/// Largest relative error between tape and central-difference gradients
/// of a random projection of the output probabilities, over every
/// trainable parameter of `model`, in training mode (batch statistics).
pub fn model_grad_check(model: &Model, signals: &Tensor, lengths: &[usize], seed: u64, eps: f64) -> f64 {
    let params = model.params();
    let trainable: Vec<usize> = (0..params.len()).filter(|&i| params.entries()[i].kind.trainable()).collect();
    let inputs: Vec<Tensor> = trainable.iter().map(|&i| params.entries()[i].tensor.clone()).collect();
    let epochs: usize = signals.shape()[2] / 30;
    let r = rand_tensor(&mut rng(seed), &[signals.shape()[0] * epochs, 2], -1.0, 1.0);
    grad_check_many(
        |tape, vars| {
            let mut it = vars.iter();
            let bound: Vec<Var> = params
                .entries()
                .iter()
                .map(|e| {
                    if e.kind.trainable() {
                        *it.next().unwrap()
                    } else {
                        tape.constant(e.tensor.clone())
                    }
                })
                .collect();
            let mut dropout_rng = rng(0);
            let out = model.forward_bound(
                tape,
                &BoundParams::from_vars(bound),
                ModelInput { signals, lengths },
                &mut Mode::Train(&mut dropout_rng),
            )?;
            project(tape, out.probs, &r)
        },
        &inputs,
        eps,
    )
    .unwrap()
}

/// Inference probabilities of one record given as standardized samples.
pub fn predict(model: &Model, signal: &[f64]) -> Tensor {
    model.predict(signal).unwrap()
}

pub fn small_records(n: usize, seed: u64) -> Vec<SleepRecord> {
    let cfg = GenConfig {
        min_epochs: 20,
        max_epochs: 40,
        ..GenConfig::default()
    };
    somnoflow::data::synthesize_dataset(n, seed, &cfg).unwrap()
}

pub fn stage_of(code: usize) -> Stage {
    if code == 1 {
        Stage::Wake
    } else {
        Stage::Sleep
    }
}

/// Calls `f` on every partition of `0..n` into exactly `count` non-empty
/// groups of at most `cap` members.
pub fn for_each_grouping(n: usize, count: usize, cap: usize, f: &mut dyn FnMut(&[Vec<usize>])) {
    fn go(i: usize, n: usize, count: usize, cap: usize, groups: &mut Vec<Vec<usize>>, f: &mut dyn FnMut(&[Vec<usize>])) {
        if i == n {
            if groups.len() == count {
                f(groups);
            }
            return;
        }
        // not enough elements left to open the remaining groups
        if groups.len() + (n - i) < count {
            return;
        }
        for g in 0..groups.len() {
            if groups[g].len() < cap {
                groups[g].push(i);
                go(i + 1, n, count, cap, groups, f);
                groups[g].pop();
            }
        }
        if groups.len() < count {
            groups.push(vec![i]);
            go(i + 1, n, count, cap, groups, f);
            groups.pop();
        }
    }
    go(0, n, count, cap, &mut Vec::new(), f);
}
