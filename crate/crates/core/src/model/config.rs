use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One dilated convolution of a residual block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    pub kernel_size: usize,
    pub out_channels: usize,
    pub dilation: usize,
    pub stride: usize,
}

/// Two convolutional sublayers (conv, batch norm, ReLU, dropout) plus a
/// skip path. Only the second sublayer strides.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResidualBlockSpec {
    pub conv1: ConvSpec,
    pub conv2: ConvSpec,
    pub dropout: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrontEndKind {
    #[default]
    Tcn,
    Cnn,
    Fnn,
}

impl std::fmt::Display for FrontEndKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FrontEndKind::Tcn => "tcn",
            FrontEndKind::Cnn => "cnn",
            FrontEndKind::Fnn => "fnn",
        })
    }
}

/// Architecture hyperparameters. Every parameter shape is derived from
/// this struct alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub heads: usize,
    pub d_ffn: usize,
    pub encoder_layers: usize,
    pub n_classes: usize,
    /// Longest accepted record, in scoring epochs.
    pub max_len: usize,
    /// Samples per scoring epoch; equals the front-end stride product.
    pub epoch_len: usize,
    pub front_end: FrontEndKind,
    pub blocks: Vec<ResidualBlockSpec>,
    /// Dropout of the encoder sublayers and the CNN baseline.
    pub dropout: f64,
}

/// Residual blocks with kernel `k`, the given channel progression and
/// second-sublayer strides, and dilation `2^(b-1)` in block `b`.
pub fn tcn_blocks(
    channels: &[usize],
    strides: &[usize],
    kernel_size: usize,
    dropout: f64,
) -> Vec<ResidualBlockSpec> {
    channels
        .iter()
        .zip(strides)
        .enumerate()
        .map(|(b, (&c, &s))| {
            let dilation = 1 << b;
            ResidualBlockSpec {
                conv1: ConvSpec {
                    kernel_size,
                    out_channels: c,
                    dilation,
                    stride: 1,
                },
                conv2: ConvSpec {
                    kernel_size,
                    out_channels: c,
                    dilation,
                    stride: s,
                },
                dropout,
            }
        })
        .collect()
}

impl Default for ModelConfig {
    /// d_model 128, 8 heads, inner FFN 512, two encoder layers, TCN with
    /// channels 16/32/64/128 and strides 5/3/2/1.
    fn default() -> Self {
        Self {
            d_model: 128,
            heads: 8,
            d_ffn: 512,
            encoder_layers: 2,
            n_classes: 2,
            max_len: 2048,
            epoch_len: 30,
            front_end: FrontEndKind::Tcn,
            blocks: tcn_blocks(&[16, 32, 64, 128], &[5, 3, 2, 1], 3, 0.1),
            dropout: 0.1,
        }
    }
}

impl ModelConfig {
    /// Small configuration for tests and quick experiments: d_model 16,
    /// two heads, one encoder layer.
    pub fn tiny() -> Self {
        Self {
            d_model: 16,
            heads: 2,
            d_ffn: 32,
            encoder_layers: 1,
            blocks: tcn_blocks(&[4, 8, 16, 16], &[5, 3, 2, 1], 3, 0.1),
            ..Self::default()
        }
    }

    pub fn with_front_end(mut self, kind: FrontEndKind) -> Self {
        self.front_end = kind;
        self
    }

    /// Sets every dropout probability (blocks and encoder) to `p`.
    pub fn with_dropout(mut self, p: f64) -> Self {
        self.dropout = p;
        for b in &mut self.blocks {
            b.dropout = p;
        }
        self
    }

    pub fn d_k(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn stride_product(&self) -> usize {
        self.blocks.iter().map(|b| b.conv1.stride * b.conv2.stride).product()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::config(m));
        if self.d_model == 0 || self.heads == 0 || self.d_ffn == 0 {
            return fail("d_model, heads and d_ffn must be positive".into());
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return fail(format!(
                "d_model {} is not divisible by heads {}",
                self.d_model, self.heads
            ));
        }
        if self.n_classes != 2 {
            return fail(format!("n_classes must be 2, got {}", self.n_classes));
        }
        if self.epoch_len == 0 || self.max_len == 0 {
            return fail("epoch_len and max_len must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.front_end == FrontEndKind::Fnn {
            return Ok(());
        }
        if self.blocks.is_empty() {
            return fail("at least one residual block is required".into());
        }
        for (i, b) in self.blocks.iter().enumerate() {
            for c in [&b.conv1, &b.conv2] {
                if c.kernel_size == 0 || c.out_channels == 0 || c.dilation == 0 || c.stride == 0 {
                    return fail(format!("block {}: convolution fields must be positive", i + 1));
                }
            }
            if b.conv1.stride != 1 {
                return fail(format!("block {}: first sublayer must have stride 1", i + 1));
            }
            if b.conv1.out_channels != b.conv2.out_channels {
                return fail(format!("block {}: sublayers must share out_channels", i + 1));
            }
            if !(0.0..1.0).contains(&b.dropout) {
                return fail(format!("block {}: dropout {} outside [0, 1)", i + 1, b.dropout));
            }
        }
        let last = self.blocks.last().map_or(0, |b| b.conv2.out_channels);
        if last != self.d_model {
            return fail(format!(
                "last block emits {last} channels but d_model is {}",
                self.d_model
            ));
        }
        if self.stride_product() != self.epoch_len {
            return fail(format!(
                "front-end stride product {} differs from epoch_len {}",
                self.stride_product(),
                self.epoch_len
            ));
        }
        Ok(())
    }
}
