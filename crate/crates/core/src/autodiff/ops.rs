//! Elementwise, reduction, shape and matrix operations.

use rayon::prelude::*;

use super::tape::{GradSink, Op, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Work (multiply-adds) below which kernels stay on the calling thread.
const PAR_THRESHOLD: usize = 1 << 16;

/// `(outer, extent, inner)` strides of `shape` around `axis`.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn same_shape(tape: &Tape, a: Var, b: Var, what: &str) -> Result<()> {
    let (sa, sb) = (tape.shape(a), tape.shape(b));
    if sa != sb {
        return Err(Error::dim(format!("{what}: shapes {sa:?} and {sb:?} differ")));
    }
    Ok(())
}

// c[m,n] = a[m,k] * b[k,n]
pub(crate) fn matmul_kernel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    let row = |(i, crow): (usize, &mut [f64])| {
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (c, &bv) in crow.iter_mut().zip(brow) {
                *c += av * bv;
            }
        }
    };
    if m * k * n >= PAR_THRESHOLD && n > 0 {
        c.par_chunks_mut(n).enumerate().for_each(row);
    } else if n > 0 {
        c.chunks_mut(n).enumerate().for_each(row);
    }
    c
}

// c[m,n] = a[m,k] * b[n,k]^T
pub(crate) fn matmul_nt_kernel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    let row = |(i, crow): (usize, &mut [f64])| {
        let arow = &a[i * k..(i + 1) * k];
        for (j, c) in crow.iter_mut().enumerate() {
            let brow = &b[j * k..(j + 1) * k];
            *c = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    };
    if m * k * n >= PAR_THRESHOLD && n > 0 {
        c.par_chunks_mut(n).enumerate().for_each(row);
    } else if n > 0 {
        c.chunks_mut(n).enumerate().for_each(row);
    }
    c
}

// c[k,n] = a[m,k]^T * b[m,n]
pub(crate) fn matmul_tn_kernel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * n];
    let row = |(p, crow): (usize, &mut [f64])| {
        for i in 0..m {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[i * n..(i + 1) * n];
            for (c, &bv) in crow.iter_mut().zip(brow) {
                *c += av * bv;
            }
        }
    };
    if m * k * n >= PAR_THRESHOLD && n > 0 {
        c.par_chunks_mut(n).enumerate().for_each(row);
    } else if n > 0 {
        c.chunks_mut(n).enumerate().for_each(row);
    }
    c
}

fn matrix_dims(tape: &Tape, v: Var, what: &str) -> Result<(usize, usize)> {
    match tape.shape(v) {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::dim(format!("{what}: expected a matrix, got shape {s:?}"))),
    }
}

pub(crate) fn matmul_backward(a: Var, b: Var, g: &[f64], sink: &mut GradSink<'_>) {
    let (m, k) = (sink.value(a).shape()[0], sink.value(a).shape()[1]);
    let n = sink.value(b).shape()[1];
    if sink.wants(a) {
        let ga = matmul_nt_kernel(g, sink.value(b).data(), m, n, k);
        sink.add(a, ga);
    }
    if sink.wants(b) {
        let gb = matmul_tn_kernel(sink.value(a).data(), g, m, k, n);
        sink.add(b, gb);
    }
}

pub(crate) fn matmul_nt_backward(a: Var, b: Var, g: &[f64], sink: &mut GradSink<'_>) {
    let (m, k) = (sink.value(a).shape()[0], sink.value(a).shape()[1]);
    let n = sink.value(b).shape()[0];
    if sink.wants(a) {
        let ga = matmul_kernel(g, sink.value(b).data(), m, n, k);
        sink.add(a, ga);
    }
    if sink.wants(b) {
        let gb = matmul_tn_kernel(g, sink.value(a).data(), m, n, k);
        sink.add(b, gb);
    }
}

pub(crate) fn transpose_last2(data: &[f64], in_shape: &[usize]) -> Vec<f64> {
    let r = in_shape.len();
    let (rows, cols) = (in_shape[r - 2], in_shape[r - 1]);
    let batch = data.len() / (rows * cols).max(1);
    let mut out = vec![0.0; data.len()];
    for b in 0..batch {
        let src = &data[b * rows * cols..(b + 1) * rows * cols];
        let dst = &mut out[b * rows * cols..(b + 1) * rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                dst[j * rows + i] = src[i * cols + j];
            }
        }
    }
    out
}

pub(crate) fn concat_backward(
    parts: &[Var],
    axis: usize,
    out_shape: &[usize],
    g: &[f64],
    sink: &mut GradSink<'_>,
) {
    let (outer, total, inner) = axis_split(out_shape, axis);
    let mut offset = 0;
    for &p in parts {
        let extent = sink.value(p).shape()[axis];
        if sink.wants(p) {
            let mut gp = Vec::with_capacity(outer * extent * inner);
            for o in 0..outer {
                let base = (o * total + offset) * inner;
                gp.extend_from_slice(&g[base..base + extent * inner]);
            }
            sink.add(p, gp);
        }
        offset += extent;
    }
}

pub(crate) fn slice_backward(
    x: Var,
    axis: usize,
    start: usize,
    out_shape: &[usize],
    g: &[f64],
    sink: &mut GradSink<'_>,
) {
    let in_shape = sink.value(x).shape().to_vec();
    let (outer, total, inner) = axis_split(&in_shape, axis);
    let extent = out_shape[axis];
    sink.add_with(x, |acc| {
        for o in 0..outer {
            let src = &g[o * extent * inner..(o + 1) * extent * inner];
            let base = (o * total + start) * inner;
            for (a, v) in acc[base..base + extent * inner].iter_mut().zip(src) {
                *a += v;
            }
        }
    });
}

pub(crate) fn softmax_forward(x: &Tensor, axis: usize) -> Vec<f64> {
    let (outer, dim, inner) = axis_split(x.shape(), axis);
    let xd = x.data();
    let mut y = vec![0.0; xd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| (o * dim + j) * inner + i;
            let max = (0..dim).map(|j| xd[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for j in 0..dim {
                let e = (xd[idx(j)] - max).exp();
                y[idx(j)] = e;
                total += e;
            }
            for j in 0..dim {
                y[idx(j)] /= total;
            }
        }
    }
    y
}

pub(crate) fn softmax_backward(y: &Tensor, axis: usize, g: &[f64]) -> Vec<f64> {
    let (outer, dim, inner) = axis_split(y.shape(), axis);
    let yd = y.data();
    let mut gx = vec![0.0; yd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| (o * dim + j) * inner + i;
            let dot: f64 = (0..dim).map(|j| g[idx(j)] * yd[idx(j)]).sum();
            for j in 0..dim {
                gx[idx(j)] = yd[idx(j)] * (g[idx(j)] - dot);
            }
        }
    }
    gx
}

impl Tape {
    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(x).map(f);
        self.push(value, &[x], op)
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(va.shape().to_vec(), data).expect("same shape");
        self.push(value, &[a, b], op)
    }

    /// Matrix product of `[m, k]` and `[k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = matrix_dims(self, a, "matmul lhs")?;
        let (k2, n) = matrix_dims(self, b, "matmul rhs")?;
        if k != k2 {
            return Err(Error::dim(format!(
                "matmul: {:?} x {:?} inner extents differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        let data = matmul_kernel(self.value(a).data(), self.value(b).data(), m, k, n);
        let value = Tensor::new(vec![m, n], data)?;
        Ok(self.push(value, &[a, b], Op::MatMul(a, b)))
    }

    /// `a * b^T` for `a: [m, k]`, `b: [n, k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = matrix_dims(self, a, "matmul_nt lhs")?;
        let (n, k2) = matrix_dims(self, b, "matmul_nt rhs")?;
        if k != k2 {
            return Err(Error::dim(format!(
                "matmul_nt: {:?} x {:?}^T inner extents differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        let data = matmul_nt_kernel(self.value(a).data(), self.value(b).data(), m, k, n);
        let value = Tensor::new(vec![m, n], data)?;
        Ok(self.push(value, &[a, b], Op::MatMulNt(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, a, b, "add")?;
        Ok(self.binary(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, a, b, "sub")?;
        Ok(self.binary(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, a, b, "mul")?;
        Ok(self.binary(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::Scale(x, c), |v| v * c)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::AddScalar(x), |v| v + c)
    }

    /// Adds `bias: [n]` to every row of `x: [.., n]`.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let n = *self.shape(x).last().unwrap_or(&0);
        if self.shape(bias) != [n] {
            return Err(Error::dim(format!(
                "row bias {:?} does not fit {:?}",
                self.shape(bias),
                self.shape(x)
            )));
        }
        let b = self.value(bias).data().to_vec();
        let mut value = self.value(x).clone();
        for row in value.data_mut().chunks_mut(n) {
            for (v, bv) in row.iter_mut().zip(&b) {
                *v += bv;
            }
        }
        Ok(self.push(value, &[x, bias], Op::RowBias(x, bias)))
    }

    /// Adds `bias: [c]` along the channel axis of `x: [c, l]` or `[n, c, l]`.
    pub fn add_channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 || self.shape(bias) != [shape[shape.len() - 2]] {
            return Err(Error::dim(format!(
                "channel bias {:?} does not fit {shape:?}",
                self.shape(bias)
            )));
        }
        let (c, l) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        let b = self.value(bias).data().to_vec();
        let mut value = self.value(x).clone();
        if l > 0 {
            for (i, row) in value.data_mut().chunks_mut(l).enumerate() {
                let bv = b[i % c];
                row.iter_mut().for_each(|v| *v += bv);
            }
        }
        Ok(self.push(value, &[x, bias], Op::ChannelBias(x, bias)))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        // NaN falls through both comparisons and propagates
        self.unary(x, Op::Relu(x), |v| if v <= 0.0 { 0.0 } else { v })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), f64::tanh)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Op::Exp(x), f64::exp)
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, Op::Log(x), f64::ln)
    }

    /// `max(x, lo)`; gradient flows where `x >= lo`.
    pub fn clamp_min(&mut self, x: Var, lo: f64) -> Var {
        self.unary(x, Op::ClampMin(x, lo), |v| if v < lo { lo } else { v })
    }

    /// `x^p` for non-negative `x`.
    pub fn powf(&mut self, x: Var, p: f64) -> Var {
        self.unary(x, Op::Powf(x, p), |v| v.powf(p))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), &[x], Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let m = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push(Tensor::scalar(m), &[x], Op::Mean(x))
    }

    /// Sums out the last axis.
    pub fn sum_last(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let Some((&last, rest)) = shape.split_last() else {
            return Err(Error::dim("sum_last on a scalar"));
        };
        let data = if last == 0 {
            vec![0.0; rest.iter().product()]
        } else {
            self.value(x).data().chunks(last).map(|r| r.iter().sum()).collect()
        };
        let value = Tensor::new(rest.to_vec(), data)?;
        Ok(self.push(value, &[x], Op::SumLast(x)))
    }

    /// Swaps the last two axes of a rank-2 or rank-3 tensor.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if !(2..=3).contains(&shape.len()) {
            return Err(Error::dim(format!("transpose of rank-{} tensor", shape.len())));
        }
        let data = transpose_last2(self.value(x).data(), &shape);
        let mut out_shape = shape.clone();
        let r = shape.len();
        out_shape.swap(r - 2, r - 1);
        let value = Tensor::new(out_shape, data)?;
        Ok(self.push(value, &[x], Op::Transpose(x)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(value, &[x], Op::Reshape(x)))
    }

    /// Joins tensors along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::dim("concat of zero tensors"));
        };
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(Error::dim(format!("concat axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::dim(format!("concat: {s:?} incompatible with {base:?}")));
            }
            total += s[axis];
        }
        let mut out_shape = base.clone();
        out_shape[axis] = total;
        let (outer, _, inner) = axis_split(&out_shape, axis);
        let mut data = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            for &p in parts {
                let v = self.value(p);
                let chunk = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let value = Tensor::new(out_shape, data)?;
        Ok(self.push(value, parts, Op::Concat(parts.to_vec(), axis)))
    }

    /// Indices `start..end` of `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start > end || end > shape[axis] {
            return Err(Error::dim(format!(
                "slice {start}..{end} on axis {axis} of {shape:?}"
            )));
        }
        let (outer, total, inner) = axis_split(&shape, axis);
        let extent = end - start;
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * extent * inner);
        for o in 0..outer {
            let base = (o * total + start) * inner;
            data.extend_from_slice(&src[base..base + extent * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = extent;
        let value = Tensor::new(out_shape, data)?;
        Ok(self.push(value, &[x], Op::Slice { x, axis, start }))
    }

    /// Softmax along `axis`, computed after subtracting the maximum.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::dim(format!("softmax axis {axis} of {shape:?}")));
        }
        let data = softmax_forward(self.value(x), axis);
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, &[x], Op::Softmax(x, axis)))
    }
}
