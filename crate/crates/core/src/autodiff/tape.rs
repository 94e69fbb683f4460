//! Define-by-run gradient tape.
//!
//! Every operation appends a node holding its output value and the handles
//! of its inputs. Because a node can only reference nodes created before
//! it, the node vector is already in topological order and the reverse
//! pass is a single backwards sweep.

use super::nn::{ConvSaved, NormSaved};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    RowBias(Var, Var),
    ChannelBias(Var, Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    ClampMin(Var, f64),
    Powf(Var, f64),
    Sum(Var),
    Mean(Var),
    SumLast(Var),
    Transpose(Var),
    Reshape(Var),
    Concat(Vec<Var>, usize),
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Softmax(Var, usize),
    Conv1d(Box<ConvSaved>),
    BatchNorm(Box<NormSaved>),
    LayerNorm(Box<NormSaved>),
}

pub(crate) struct Node {
    pub(crate) value: Tensor,
    pub(crate) requires_grad: bool,
    pub(crate) op: Op,
}

/// Recorded computation graph plus the gradient accumulators of its leaves.
#[derive(Default)]
pub struct Tape {
    pub(crate) nodes: Vec<Node>,
    leaf_grads: Vec<Option<Tensor>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable input: gradients are accumulated for it.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_raw(value, true, Op::Leaf)
    }

    /// Input that takes no part in differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(value, false, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.leaf_grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.clear();
    }

    pub(crate) fn push_raw(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a derived node; it needs a gradient when any input does.
    pub(crate) fn push(&mut self, value: Tensor, inputs: &[Var], op: Op) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push_raw(value, requires_grad, op)
    }

    /// Reverse sweep from a scalar `loss`, adding d(loss)/d(leaf) into the
    /// leaf accumulators. Calling it twice without [`Tape::zero_grad`]
    /// accumulates.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let root = &self.nodes[loss.0].value;
        if root.numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                if self.leaf_grads.len() < self.nodes.len() {
                    self.leaf_grads.resize_with(self.nodes.len(), || None);
                }
                match &mut self.leaf_grads[i] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => {
                        *slot = Some(Tensor::new(node.value.shape().to_vec(), g)?);
                    }
                }
                continue;
            }
            let mut sink = GradSink {
                nodes: &self.nodes,
                grads: &mut grads,
            };
            backward_node(node, &g, &mut sink);
        }
        Ok(())
    }
}

/// Gradient accumulator handed to backward rules.
pub(crate) struct GradSink<'a> {
    pub(crate) nodes: &'a [Node],
    grads: &'a mut [Option<Vec<f64>>],
}

impl<'a> GradSink<'a> {
    pub(crate) fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn value(&self, v: Var) -> &'a Tensor {
        &self.nodes[v.0].value
    }

    pub(crate) fn add(&mut self, v: Var, g: Vec<f64>) {
        if !self.wants(v) {
            return;
        }
        match &mut self.grads[v.0] {
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(&g) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    /// Adds `g` into `v`'s gradient through a closure so that no temporary
    /// has to be allocated when the slot already exists.
    pub(crate) fn add_with(&mut self, v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.wants(v) {
            return;
        }
        let n = self.nodes[v.0].value.numel();
        let slot = self.grads[v.0].get_or_insert_with(|| vec![0.0; n]);
        f(slot);
    }
}

fn backward_node(node: &Node, g: &[f64], sink: &mut GradSink<'_>) {
    use super::{nn, ops};
    let y = &node.value;
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => ops::matmul_backward(*a, *b, g, sink),
        Op::MatMulNt(a, b) => ops::matmul_nt_backward(*a, *b, g, sink),
        Op::Add(a, b) => {
            sink.add(*a, g.to_vec());
            sink.add(*b, g.to_vec());
        }
        Op::Sub(a, b) => {
            sink.add(*a, g.to_vec());
            sink.add(*b, g.iter().map(|v| -v).collect());
        }
        Op::Mul(a, b) => {
            if sink.wants(*a) {
                let bv = sink.value(*b).data();
                let ga = g.iter().zip(bv).map(|(g, b)| g * b).collect();
                sink.add(*a, ga);
            }
            if sink.wants(*b) {
                let av = sink.value(*a).data();
                let gb = g.iter().zip(av).map(|(g, a)| g * a).collect();
                sink.add(*b, gb);
            }
        }
        Op::Scale(x, c) => sink.add(*x, g.iter().map(|v| v * c).collect()),
        Op::AddScalar(x) => sink.add(*x, g.to_vec()),
        Op::RowBias(x, b) => {
            sink.add(*x, g.to_vec());
            let n = sink.value(*b).numel();
            sink.add_with(*b, |acc| {
                for row in g.chunks(n) {
                    for (a, v) in acc.iter_mut().zip(row) {
                        *a += v;
                    }
                }
            });
        }
        Op::ChannelBias(x, b) => {
            sink.add(*x, g.to_vec());
            let shape = y.shape();
            let (c, l) = (shape[shape.len() - 2], shape[shape.len() - 1]);
            sink.add_with(*b, |acc| {
                for (i, row) in g.chunks(l).enumerate() {
                    acc[i % c] += row.iter().sum::<f64>();
                }
            });
        }
        Op::Relu(x) => {
            let xv = sink.value(*x).data();
            let gx = g
                .iter()
                .zip(xv)
                .map(|(g, &x)| if x <= 0.0 { 0.0 } else { *g })
                .collect();
            sink.add(*x, gx);
        }
        Op::Tanh(x) => {
            let gx = g
                .iter()
                .zip(y.data())
                .map(|(g, t)| g * (1.0 - t * t))
                .collect();
            sink.add(*x, gx);
        }
        Op::Exp(x) => {
            let gx = g.iter().zip(y.data()).map(|(g, e)| g * e).collect();
            sink.add(*x, gx);
        }
        Op::Log(x) => {
            let xv = sink.value(*x).data();
            let gx = g.iter().zip(xv).map(|(g, x)| g / x).collect();
            sink.add(*x, gx);
        }
        Op::ClampMin(x, lo) => {
            let xv = sink.value(*x).data();
            let gx = g
                .iter()
                .zip(xv)
                .map(|(g, &x)| if x < *lo { 0.0 } else { *g })
                .collect();
            sink.add(*x, gx);
        }
        Op::Powf(x, p) => {
            let xv = sink.value(*x).data();
            let gx = g
                .iter()
                .zip(xv)
                .map(|(g, &x)| {
                    if *p == 0.0 {
                        0.0
                    } else {
                        g * p * x.powf(p - 1.0)
                    }
                })
                .collect();
            sink.add(*x, gx);
        }
        Op::Sum(x) => {
            let n = sink.value(*x).numel();
            sink.add(*x, vec![g[0]; n]);
        }
        Op::Mean(x) => {
            let n = sink.value(*x).numel();
            sink.add(*x, vec![g[0] / n as f64; n]);
        }
        Op::SumLast(x) => {
            let last = *sink.value(*x).shape().last().unwrap_or(&1);
            let gx = g
                .iter()
                .flat_map(|&v| std::iter::repeat_n(v, last))
                .collect();
            sink.add(*x, gx);
        }
        Op::Transpose(x) => {
            let gx = ops::transpose_last2(g, y.shape());
            sink.add(*x, gx);
        }
        Op::Reshape(x) => sink.add(*x, g.to_vec()),
        Op::Concat(parts, axis) => ops::concat_backward(parts, *axis, y.shape(), g, sink),
        Op::Slice { x, axis, start } => ops::slice_backward(*x, *axis, *start, y.shape(), g, sink),
        Op::Softmax(x, axis) => {
            let gx = ops::softmax_backward(y, *axis, g);
            sink.add(*x, gx);
        }
        Op::Conv1d(saved) => nn::conv1d_backward(saved, g, sink),
        Op::BatchNorm(saved) => nn::batch_norm_backward(saved, g, sink),
        Op::LayerNorm(saved) => nn::layer_norm_backward(saved, g, sink),
    }
}
