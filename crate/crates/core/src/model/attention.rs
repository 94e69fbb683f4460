//! Scaled dot-product attention, multi-head attention and the post-norm
//! encoder layer.

use super::layers::{dropout, feed_forward, Mode};
use super::params::ParamView;
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// `softmax(Q K^T / sqrt(d_k) + bias) V` for one sequence, where `bias` is
/// `-inf` on key columns with `key_valid[j] == false`.
///
/// Returns the output `[L, d_k]` and the row-stochastic attention matrix
/// `[L, L]`.
pub fn scaled_dot_attention(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    key_valid: &[bool],
) -> Result<(Var, Var)> {
    let (qs, ks, vs) = (tape.shape(q).to_vec(), tape.shape(k).to_vec(), tape.shape(v).to_vec());
    if qs.len() != 2 || qs != ks || ks[0] != vs[0] || key_valid.len() != ks[0] {
        return Err(Error::dim(format!(
            "attention shapes Q{qs:?} K{ks:?} V{vs:?} mask[{}]",
            key_valid.len()
        )));
    }
    if !key_valid.iter().any(|&b| b) {
        return Err(Error::contract("attention row with every key masked"));
    }
    let (len, dk) = (qs[0], qs[1]);
    let scores = tape.matmul_nt(q, k)?;
    let mut scores = tape.scale(scores, 1.0 / (dk as f64).sqrt());
    if key_valid.iter().any(|&b| !b) {
        let row: Vec<f64> = key_valid
            .iter()
            .map(|&ok| if ok { 0.0 } else { f64::NEG_INFINITY })
            .collect();
        let bias = Tensor::new(vec![len, len], row.repeat(len))?;
        let bias = tape.constant(bias);
        scores = tape.add(scores, bias)?;
    }
    let attn = tape.softmax(scores, 1)?;
    let out = tape.matmul(attn, v)?;
    Ok((out, attn))
}

/// Packed batch of sequences: `records` blocks of `padded_len` rows, the
/// first `valid[n]` rows of block `n` being real.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceLayout {
    pub padded_len: usize,
    pub valid: Vec<usize>,
}

impl SequenceLayout {
    pub fn single(len: usize) -> Self {
        Self {
            padded_len: len,
            valid: vec![len],
        }
    }

    pub fn records(&self) -> usize {
        self.valid.len()
    }

    fn key_valid(&self, n: usize) -> Vec<bool> {
        (0..self.padded_len).map(|i| i < self.valid[n]).collect()
    }
}

pub struct MhaWeights {
    /// Per-head `[d_model, d_k]` projections.
    pub wq: Vec<Var>,
    pub wk: Vec<Var>,
    pub wv: Vec<Var>,
    /// `[h*d_k, d_model]` output projection.
    pub w0: Var,
}

pub struct EncoderWeights {
    pub mha: MhaWeights,
    pub ln1: (Var, Var),
    pub ffn: [Var; 4],
    pub ln2: (Var, Var),
}

impl EncoderWeights {
    pub(crate) fn lookup(view: &ParamView<'_>, layer: usize, heads: usize) -> Result<Self> {
        let p = format!("enc{layer}");
        let per_head = |m: &str| -> Result<Vec<Var>> {
            (0..heads).map(|h| view.var(&format!("{p}.head{h}.{m}"))).collect()
        };
        Ok(Self {
            mha: MhaWeights {
                wq: per_head("Wq")?,
                wk: per_head("Wk")?,
                wv: per_head("Wv")?,
                w0: view.var(&format!("{p}.W0"))?,
            },
            ln1: (view.var(&format!("{p}.ln1.gamma"))?, view.var(&format!("{p}.ln1.beta"))?),
            ffn: [
                view.var(&format!("{p}.ffn.W1"))?,
                view.var(&format!("{p}.ffn.b1"))?,
                view.var(&format!("{p}.ffn.W2"))?,
                view.var(&format!("{p}.ffn.b2"))?,
            ],
            ln2: (view.var(&format!("{p}.ln2.gamma"))?, view.var(&format!("{p}.ln2.beta"))?),
        })
    }
}

/// Multi-head self-attention over a packed batch `x: [records*L, d_model]`.
///
/// Returns the projected output and the attention matrices indexed
/// `[head][record]`.
pub fn multi_head_attention(
    tape: &mut Tape,
    x: Var,
    w: &MhaWeights,
    layout: &SequenceLayout,
) -> Result<(Var, Vec<Vec<Var>>)> {
    let rows = tape.shape(x)[0];
    if rows != layout.records() * layout.padded_len {
        return Err(Error::dim(format!(
            "packed input has {rows} rows, layout expects {} x {}",
            layout.records(),
            layout.padded_len
        )));
    }
    let l = layout.padded_len;
    let mut head_outputs = Vec::with_capacity(w.wq.len());
    let mut maps = Vec::with_capacity(w.wq.len());
    for h in 0..w.wq.len() {
        let q = tape.matmul(x, w.wq[h])?;
        let k = tape.matmul(x, w.wk[h])?;
        let v = tape.matmul(x, w.wv[h])?;
        if layout.records() == 1 {
            let (out, attn) = scaled_dot_attention(tape, q, k, v, &layout.key_valid(0))?;
            head_outputs.push(out);
            maps.push(vec![attn]);
            continue;
        }
        let mut outs = Vec::with_capacity(layout.records());
        let mut attns = Vec::with_capacity(layout.records());
        for n in 0..layout.records() {
            let qn = tape.slice(q, 0, n * l, (n + 1) * l)?;
            let kn = tape.slice(k, 0, n * l, (n + 1) * l)?;
            let vn = tape.slice(v, 0, n * l, (n + 1) * l)?;
            let (out, attn) = scaled_dot_attention(tape, qn, kn, vn, &layout.key_valid(n))?;
            outs.push(out);
            attns.push(attn);
        }
        head_outputs.push(tape.concat(&outs, 0)?);
        maps.push(attns);
    }
    let concat = if head_outputs.len() == 1 {
        head_outputs[0]
    } else {
        tape.concat(&head_outputs, 1)?
    };
    let out = tape.matmul(concat, w.w0)?;
    Ok((out, maps))
}

/// Post-norm encoder layer:
/// `x1 = LN(x + Dropout(MHA(x)))`, `x2 = LN(x1 + Dropout(FFN(x1)))`.
pub fn encoder_layer(
    tape: &mut Tape,
    x: Var,
    w: &EncoderWeights,
    layout: &SequenceLayout,
    p_drop: f64,
    mode: &mut Mode<'_>,
) -> Result<(Var, Vec<Vec<Var>>)> {
    let (att, maps) = multi_head_attention(tape, x, &w.mha, layout)?;
    let att = dropout(tape, att, p_drop, mode)?;
    let r1 = tape.add(x, att)?;
    let x1 = tape.layer_norm(r1, w.ln1.0, w.ln1.1)?;
    let [w1, b1, w2, b2] = w.ffn;
    let f = feed_forward(tape, x1, w1, b1, w2, b2)?;
    let f = dropout(tape, f, p_drop, mode)?;
    let r2 = tape.add(x1, f)?;
    let x2 = tape.layer_norm(r2, w.ln2.0, w.ln2.1)?;
    Ok((x2, maps))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_position_returns_value_row() {
        let mut t = Tape::new();
        let q = t.constant(Tensor::from_rows(&[vec![3.0, -1.0]]).unwrap());
        let k = t.constant(Tensor::from_rows(&[vec![0.5, 2.0]]).unwrap());
        let v = t.constant(Tensor::from_rows(&[vec![7.0, 8.0]]).unwrap());
        let (out, attn) = scaled_dot_attention(&mut t, q, k, v, &[true]).unwrap();
        assert_eq!(t.value(out).data(), &[7.0, 8.0]);
        assert_eq!(t.value(attn).data(), &[1.0]);
    }

    #[test]
    fn zero_queries_average_unmasked_values() {
        let mut t = Tape::new();
        let q = t.constant(Tensor::zeros(&[3, 2]));
        let k = t.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap());
        let v = t.constant(Tensor::from_rows(&[vec![1.0, 10.0], vec![3.0, 20.0], vec![100.0, 100.0]]).unwrap());
        let (out, attn) = scaled_dot_attention(&mut t, q, k, v, &[true, true, false]).unwrap();
        for row in t.value(out).data().chunks(2) {
            assert!((row[0] - 2.0).abs() < 1e-12 && (row[1] - 15.0).abs() < 1e-12);
        }
        for row in t.value(attn).data().chunks(3) {
            assert_eq!(row[2], 0.0);
        }
    }

    #[test]
    fn fully_masked_row_is_a_contract_error() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::zeros(&[2, 2]));
        let r = scaled_dot_attention(&mut t, x, x, x, &[false, false]);
        assert!(matches!(r, Err(Error::Contract(_))));
    }
}
