//! Fused network primitives: 1-D convolution, masked batch normalization
//! and layer normalization, each with a hand-written backward rule.

use rayon::prelude::*;

use super::ops::axis_split;
use super::tape::{GradSink, Op, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const NORM_EPS: f64 = 1e-5;

/// Zero padding applied before the first and after the last sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Padding {
    pub left: usize,
    pub right: usize,
}

impl Padding {
    pub fn symmetric(p: usize) -> Self {
        Self { left: p, right: p }
    }

    /// Padding that keeps a stride-1 convolution length-preserving:
    /// `floor(span/2)` on the left, `ceil(span/2)` on the right.
    pub fn same(kernel: usize, dilation: usize) -> Self {
        let span = dilation * (kernel - 1);
        Self {
            left: span / 2,
            right: span - span / 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub dilation: usize,
    pub stride: usize,
    pub padding: Padding,
}

impl ConvGeometry {
    pub fn new(dilation: usize, stride: usize, padding: Padding) -> Self {
        Self {
            dilation,
            stride,
            padding,
        }
    }

    /// Output length for an input of `len` samples and kernel size `k`,
    /// or `None` when the dilated kernel does not fit the padded input.
    pub fn output_len(&self, len: usize, k: usize) -> Option<usize> {
        let padded = len + self.padding.left + self.padding.right;
        let span = self.dilation * (k - 1) + 1;
        (span <= padded).then(|| (padded - span) / self.stride + 1)
    }
}

pub(crate) struct ConvSaved {
    x: Var,
    w: Var,
    bias: Option<Var>,
    geom: ConvGeometry,
    batch: usize,
    c_in: usize,
    len_in: usize,
    c_out: usize,
    k: usize,
    len_out: usize,
}

impl ConvSaved {
    /// Output indices `j` for which tap `t` reads inside `[0, len_in)`.
    fn valid_range(&self, t: usize) -> std::ops::Range<usize> {
        let s = self.geom.stride as isize;
        let off = (t * self.geom.dilation) as isize - self.geom.padding.left as isize;
        // need 0 <= j*s + off <= len_in - 1
        let lo = if off >= 0 { 0 } else { (-off + s - 1) / s };
        let hi_num = self.len_in as isize - 1 - off;
        let hi = if hi_num < 0 { -1 } else { hi_num / s };
        let lo = lo as usize;
        let end = ((hi + 1).max(0) as usize).min(self.len_out);
        lo.min(end)..end
    }

    fn input_index(&self, j: usize, t: usize) -> usize {
        j * self.geom.stride + t * self.geom.dilation - self.geom.padding.left
    }
}

pub(crate) fn conv1d_backward(s: &ConvSaved, g: &[f64], sink: &mut GradSink<'_>) {
    let x = sink.value(s.x).data();
    let w = sink.value(s.w).data();
    let (k, c_in, c_out, len_in, len_out) = (s.k, s.c_in, s.c_out, s.len_in, s.len_out);
    let ranges: Vec<_> = (0..k).map(|t| s.valid_range(t)).collect();

    if sink.wants(s.x) {
        let mut gx = vec![0.0; s.batch * c_in * len_in];
        gx.par_chunks_mut(len_in.max(1))
            .enumerate()
            .for_each(|(row, gxrow)| {
                let (n, c) = (row / c_in, row % c_in);
                for o in 0..c_out {
                    let grow = &g[(n * c_out + o) * len_out..(n * c_out + o + 1) * len_out];
                    for t in 0..k {
                        let wv = w[(o * c_in + c) * k + t];
                        for j in ranges[t].clone() {
                            gxrow[s.input_index(j, t)] += wv * grow[j];
                        }
                    }
                }
            });
        sink.add(s.x, gx);
    }
    if sink.wants(s.w) {
        let mut gw = vec![0.0; c_out * c_in * k];
        gw.par_chunks_mut(c_in * k).enumerate().for_each(|(o, gwo)| {
            for n in 0..s.batch {
                let grow = &g[(n * c_out + o) * len_out..(n * c_out + o + 1) * len_out];
                for c in 0..c_in {
                    let xrow = &x[(n * c_in + c) * len_in..(n * c_in + c + 1) * len_in];
                    for t in 0..k {
                        let mut acc = 0.0;
                        for j in ranges[t].clone() {
                            acc += grow[j] * xrow[s.input_index(j, t)];
                        }
                        gwo[c * k + t] += acc;
                    }
                }
            }
        });
        sink.add(s.w, gw);
    }
    if let Some(b) = s.bias {
        if sink.wants(b) {
            let mut gb = vec![0.0; c_out];
            for (row, grow) in g.chunks(len_out.max(1)).enumerate() {
                gb[row % c_out] += grow.iter().sum::<f64>();
            }
            sink.add(b, gb);
        }
    }
}

/// Saved state shared by batch and layer normalization.
pub(crate) struct NormSaved {
    x: Var,
    gamma: Var,
    beta: Var,
    /// Normalized input, zero at masked positions.
    xhat: Vec<f64>,
    /// `1/sqrt(var + eps)` per normalized group.
    inv_std: Vec<f64>,
    /// Position validity `[n, l]` (batch norm only).
    mask: Vec<f64>,
    /// Statistics came from the batch itself (training mode).
    batch_stats: bool,
}

/// Per-channel statistics measured by a training-mode batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance, as used for the running estimate.
    pub var_unbiased: Vec<f64>,
}

/// How a batch-norm call normalizes.
pub enum BatchNormMode<'a> {
    /// Use the masked mean/variance of this batch.
    Batch,
    /// Use frozen running statistics.
    Running { mean: &'a [f64], var: &'a [f64] },
}

pub(crate) fn batch_norm_backward(s: &NormSaved, g: &[f64], sink: &mut GradSink<'_>) {
    let shape = sink.value(s.x).shape().to_vec();
    let (n, c, l) = (shape[0], shape[1], shape[2]);
    let gamma = sink.value(s.gamma).data().to_vec();
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    let count: f64 = s.mask.iter().sum();
    let mut gx = vec![0.0; g.len()];
    for ch in 0..c {
        let (mut sum_d, mut sum_dx) = (0.0, 0.0);
        for b in 0..n {
            let base = (b * c + ch) * l;
            for p in 0..l {
                let m = s.mask[b * l + p];
                if m == 0.0 {
                    continue;
                }
                let gv = g[base + p];
                dgamma[ch] += gv * s.xhat[base + p];
                dbeta[ch] += gv;
                let d = gv * gamma[ch];
                sum_d += d;
                sum_dx += d * s.xhat[base + p];
            }
        }
        let inv = s.inv_std[ch];
        for b in 0..n {
            let base = (b * c + ch) * l;
            for p in 0..l {
                if s.mask[b * l + p] == 0.0 {
                    continue;
                }
                let d = g[base + p] * gamma[ch];
                gx[base + p] = if s.batch_stats {
                    inv * (d - sum_d / count - s.xhat[base + p] * sum_dx / count)
                } else {
                    inv * d
                };
            }
        }
    }
    sink.add(s.x, gx);
    sink.add(s.gamma, dgamma);
    sink.add(s.beta, dbeta);
}

pub(crate) fn layer_norm_backward(s: &NormSaved, g: &[f64], sink: &mut GradSink<'_>) {
    let d = sink.value(s.gamma).numel();
    let gamma = sink.value(s.gamma).data().to_vec();
    let mut dgamma = vec![0.0; d];
    let mut dbeta = vec![0.0; d];
    let mut gx = vec![0.0; g.len()];
    for (r, (grow, gxrow)) in g.chunks(d).zip(gx.chunks_mut(d)).enumerate() {
        let xhat = &s.xhat[r * d..(r + 1) * d];
        let (mut sum_d, mut sum_dx) = (0.0, 0.0);
        for i in 0..d {
            dgamma[i] += grow[i] * xhat[i];
            dbeta[i] += grow[i];
            let dv = grow[i] * gamma[i];
            sum_d += dv;
            sum_dx += dv * xhat[i];
        }
        let inv = s.inv_std[r];
        let nf = d as f64;
        for i in 0..d {
            let dv = grow[i] * gamma[i];
            gxrow[i] = inv * (dv - sum_d / nf - xhat[i] * sum_dx / nf);
        }
    }
    sink.add(s.x, gx);
    sink.add(s.gamma, dgamma);
    sink.add(s.beta, dbeta);
}

impl Tape {
    /// Cross-correlation of `x: [c_in, L]` or `[n, c_in, L]` with
    /// `w: [c_out, c_in, k]`, optional `bias: [c_out]`.
    pub fn conv1d(
        &mut self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        geom: ConvGeometry,
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let (batch, c_in, len_in, batched) = match xs[..] {
            [c, l] => (1, c, l, false),
            [n, c, l] => (n, c, l, true),
            _ => return Err(Error::dim(format!("conv1d input must be [c, L] or [n, c, L], got {xs:?}"))),
        };
        let ws = self.shape(w).to_vec();
        let [c_out, wc_in, k] = ws[..] else {
            return Err(Error::dim(format!("conv1d weight must be [c_out, c_in, k], got {ws:?}")));
        };
        if wc_in != c_in || k == 0 {
            return Err(Error::dim(format!("conv1d weight {ws:?} does not fit input {xs:?}")));
        }
        if let Some(b) = bias {
            if self.shape(b) != [c_out] {
                return Err(Error::dim(format!(
                    "conv1d bias {:?} does not fit {c_out} output channels",
                    self.shape(b)
                )));
            }
        }
        if geom.dilation == 0 || geom.stride == 0 {
            return Err(Error::contract("conv1d dilation and stride must be >= 1"));
        }
        let Some(len_out) = geom.output_len(len_in, k) else {
            return Err(Error::dim(format!(
                "conv1d kernel span {} exceeds padded length {}",
                geom.dilation * (k - 1) + 1,
                len_in + geom.padding.left + geom.padding.right
            )));
        };
        let saved = ConvSaved {
            x,
            w,
            bias,
            geom,
            batch,
            c_in,
            len_in,
            c_out,
            k,
            len_out,
        };
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        let bd = bias.map(|b| self.value(b).data());
        let ranges: Vec<_> = (0..k).map(|t| saved.valid_range(t)).collect();
        let mut out = vec![0.0; batch * c_out * len_out];
        out.par_chunks_mut(len_out.max(1))
            .enumerate()
            .for_each(|(row, orow)| {
                let (n, o) = (row / c_out, row % c_out);
                if let Some(b) = bd {
                    orow.iter_mut().for_each(|v| *v = b[o]);
                }
                for c in 0..c_in {
                    let xrow = &xd[(n * c_in + c) * len_in..(n * c_in + c + 1) * len_in];
                    for t in 0..k {
                        let wv = wd[(o * c_in + c) * k + t];
                        for j in ranges[t].clone() {
                            orow[j] += wv * xrow[saved.input_index(j, t)];
                        }
                    }
                }
            });
        let shape = if batched {
            vec![batch, c_out, len_out]
        } else {
            vec![c_out, len_out]
        };
        let value = Tensor::new(shape, out)?;
        let mut inputs = vec![x, w];
        inputs.extend(bias);
        Ok(self.push(value, &inputs, Op::Conv1d(Box::new(saved))))
    }

    /// Batch normalization of `x: [n, c, l]` per channel over the valid
    /// positions of `mask: [n, l]` (1 valid, 0 padded). Outputs are zero at
    /// padded positions. In [`BatchNormMode::Batch`] the measured batch
    /// statistics are returned for the running estimate.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mask: &[f64],
        mode: BatchNormMode<'_>,
    ) -> Result<(Var, Option<BatchStats>)> {
        let xs = self.shape(x).to_vec();
        let [n, c, l] = xs[..] else {
            return Err(Error::dim(format!("batch_norm input must be [n, c, l], got {xs:?}")));
        };
        if self.shape(gamma) != [c] || self.shape(beta) != [c] || mask.len() != n * l {
            return Err(Error::dim(format!(
                "batch_norm affine {:?}/{:?} or mask length {} does not fit {xs:?}",
                self.shape(gamma),
                self.shape(beta),
                mask.len()
            )));
        }
        let count: f64 = mask.iter().sum();
        let xd = self.value(x).data();
        let (mean, var, stats) = match mode {
            BatchNormMode::Batch => {
                if count == 0.0 {
                    return Err(Error::contract("batch_norm over a fully padded batch"));
                }
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ch in 0..c {
                    let mut s = 0.0;
                    for b in 0..n {
                        let row = &xd[(b * c + ch) * l..(b * c + ch + 1) * l];
                        s += row.iter().zip(&mask[b * l..(b + 1) * l]).map(|(x, m)| x * m).sum::<f64>();
                    }
                    mean[ch] = s / count;
                    let mut ss = 0.0;
                    for b in 0..n {
                        let row = &xd[(b * c + ch) * l..(b * c + ch + 1) * l];
                        ss += row
                            .iter()
                            .zip(&mask[b * l..(b + 1) * l])
                            .map(|(x, m)| m * (x - mean[ch]) * (x - mean[ch]))
                            .sum::<f64>();
                    }
                    var[ch] = ss / count;
                }
                let unbiased = if count > 1.0 {
                    var.iter().map(|v| v * count / (count - 1.0)).collect()
                } else {
                    var.clone()
                };
                let stats = BatchStats {
                    mean: mean.clone(),
                    var_unbiased: unbiased,
                };
                (mean, var, Some(stats))
            }
            BatchNormMode::Running { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(Error::dim("running statistics do not match channel count"));
                }
                (mean.to_vec(), var.to_vec(), None)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect();
        let gd = self.value(gamma).data();
        let bd = self.value(beta).data();
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * l;
                for p in 0..l {
                    if mask[b * l + p] == 0.0 {
                        continue;
                    }
                    let h = (xd[base + p] - mean[ch]) * inv_std[ch];
                    xhat[base + p] = h;
                    out[base + p] = gd[ch] * h + bd[ch];
                }
            }
        }
        let saved = NormSaved {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            mask: mask.to_vec(),
            batch_stats: stats.is_some(),
        };
        let value = Tensor::new(xs, out)?;
        let v = self.push(value, &[x, gamma, beta], Op::BatchNorm(Box::new(saved)));
        Ok((v, stats))
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let d = *xs.last().ok_or_else(|| Error::dim("layer_norm on a scalar"))?;
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::dim(format!(
                "layer_norm affine {:?} does not fit {xs:?}",
                self.shape(gamma)
            )));
        }
        let (rows, _, _) = axis_split(&xs, xs.len() - 1);
        let xd = self.value(x).data();
        let gd = self.value(gamma).data();
        let bd = self.value(beta).data();
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &xd[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + NORM_EPS).sqrt();
            inv_std.push(inv);
            for i in 0..d {
                let h = (row[i] - mean) * inv;
                xhat[r * d + i] = h;
                out[r * d + i] = gd[i] * h + bd[i];
            }
        }
        let saved = NormSaved {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            mask: Vec::new(),
            batch_stats: true,
        };
        let value = Tensor::new(xs, out)?;
        Ok(self.push(value, &[x, gamma, beta], Op::LayerNorm(Box::new(saved))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_padding_keeps_length() {
        let g = ConvGeometry::new(1, 1, Padding::symmetric(1));
        assert_eq!(g.output_len(30, 3), Some(30));
        for d in 1..5 {
            for k in 1..6 {
                let g = ConvGeometry::new(d, 1, Padding::same(k, d));
                assert_eq!(g.output_len(40, k), Some(40));
            }
        }
    }

    #[test]
    fn zero_input_zero_bias_gives_zero_output() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::zeros(&[2, 30]));
        let w = t.constant(Tensor::full(&[3, 2, 3], 0.7));
        let b = t.constant(Tensor::zeros(&[3]));
        let y = t.conv1d(x, w, Some(b), ConvGeometry::new(1, 1, Padding::symmetric(1))).unwrap();
        assert_eq!(t.shape(y), &[3, 30]);
        assert!(t.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn span_larger_than_input_is_rejected() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::zeros(&[1, 4]));
        let w = t.constant(Tensor::zeros(&[1, 1, 3]));
        let geom = ConvGeometry::new(3, 1, Padding::symmetric(0));
        assert!(matches!(t.conv1d(x, w, None, geom), Err(Error::Dimension(_))));
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::from_rows(&[vec![1.0, 2.0, 3.0, 10.0], vec![-4.0, 0.5, 0.5, 7.0]]).unwrap());
        let g = t.constant(Tensor::ones(&[4]));
        let b = t.constant(Tensor::zeros(&[4]));
        let y = t.layer_norm(x, g, b).unwrap();
        for row in t.value(y).data().chunks(4) {
            let mean = row.iter().sum::<f64>() / 4.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            // eps in the denominator shrinks the variance slightly below 1
            assert!((var - 1.0).abs() < 1e-6, "{var}");
        }
    }

    #[test]
    fn batch_norm_ignores_padded_positions() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::new(vec![2, 1, 3], vec![1.0, 2.0, 3.0, 5.0, 99.0, -99.0]).unwrap());
        let g = t.constant(Tensor::ones(&[1]));
        let b = t.constant(Tensor::zeros(&[1]));
        let mask = [1.0, 1.0, 1.0, 1.0, 0.0, 0.0];
        let (y, stats) = t.batch_norm(x, g, b, &mask, BatchNormMode::Batch).unwrap();
        let stats = stats.unwrap();
        assert!((stats.mean[0] - 2.75).abs() < 1e-12);
        let out = t.value(y).data();
        assert_eq!(&out[4..], &[0.0, 0.0]);
        let valid = [out[0], out[1], out[2], out[3]];
        assert!(valid.iter().sum::<f64>().abs() < 1e-12);
    }
}
