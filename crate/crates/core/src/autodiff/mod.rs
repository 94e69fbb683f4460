//! Dense `f64` tensors with reverse-mode automatic differentiation.
//!
//! Values are recorded on a [`Tape`] as they are computed; [`Tape::backward`]
//! replays the recorded operations in reverse. Broadcasting is limited to
//! the two bias patterns the network needs ([`Tape::add_row_bias`] and
//! [`Tape::add_channel_bias`]); anything else needs an explicit reshape.

mod gradcheck;
mod nn;
mod ops;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_many, relative_error};
pub use nn::{BatchNormMode, BatchStats, ConvGeometry, Padding, NORM_EPS};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
