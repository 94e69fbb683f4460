//! Network architecture: representation front-end (TCN, or the CNN and
//! FNN baselines), sinusoidal positions, post-norm transformer encoder and
//! a two-layer decoder with a per-epoch softmax over (Sleep, Wake).

pub mod attention;
pub mod config;
mod front_end;
pub mod layers;
pub mod network;
pub mod params;
pub mod positional;

pub use attention::{encoder_layer, multi_head_attention, scaled_dot_attention, EncoderWeights, MhaWeights, SequenceLayout};
pub use config::{tcn_blocks, ConvSpec, FrontEndKind, ModelConfig, ResidualBlockSpec};
pub use layers::Mode;
pub use network::{split_records, ForwardOutput, Model, ModelInput, BN_MOMENTUM};
pub use params::{init_parameters, BoundParams, ModelParameters, ParamEntry, ParamKind};
pub use positional::{positional_encoding, positional_value};
