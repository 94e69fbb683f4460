//! Wake/sleep staging of pulse-oximeter heart-rate recordings.
//!
//! The pipeline is a temporal convolutional front-end that turns a 1 Hz
//! heart-rate series into one feature vector per 30-second scoring epoch,
//! a post-norm transformer encoder over those epochs, and a small
//! feed-forward decoder emitting Wake/Sleep probabilities. Everything runs
//! on the small reverse-mode autodiff engine in [`autodiff`].

// `!(x > 0.0)` is the NaN-rejecting form used by config validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod training;

pub use error::{Error, Result};
