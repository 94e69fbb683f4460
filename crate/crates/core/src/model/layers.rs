//! Forward-mode switch and the small layer helpers shared by the
//! front-ends and the encoder.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::Result;

/// Training mode samples dropout masks and normalizes with batch
/// statistics; inference mode is deterministic and uses running statistics.
pub enum Mode<'r> {
    Train(&'r mut ChaCha8Rng),
    Infer,
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

/// Inverted dropout: survivors are scaled by `1/(1-p)`.
pub fn dropout(tape: &mut Tape, x: Var, p: f64, mode: &mut Mode<'_>) -> Result<Var> {
    let Mode::Train(rng) = mode else { return Ok(x) };
    if p <= 0.0 {
        return Ok(x);
    }
    let keep = 1.0 / (1.0 - p);
    let shape = tape.shape(x).to_vec();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect();
    let m = tape.constant(Tensor::new(shape, data)?);
    tape.mul(x, m)
}

/// `x W + b` for row-major `x: [rows, in]`, `w: [in, out]`.
pub fn linear(tape: &mut Tape, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    match b {
        Some(b) => tape.add_row_bias(y, b),
        None => Ok(y),
    }
}

/// `W2 ReLU(W1 x + b1) + b2` applied row-wise.
pub fn feed_forward(tape: &mut Tape, x: Var, w1: Var, b1: Var, w2: Var, b2: Var) -> Result<Var> {
    let h = linear(tape, x, w1, Some(b1))?;
    let h = tape.relu(h);
    linear(tape, h, w2, Some(b2))
}

/// Validity mask `[n, len]` (1 valid, 0 padded) for records of the given
/// valid lengths.
pub fn length_mask(valid: &[usize], len: usize) -> Vec<f64> {
    valid
        .iter()
        .flat_map(|&v| (0..len).map(move |i| if i < v { 1.0 } else { 0.0 }))
        .collect()
}
