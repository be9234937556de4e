//! Long-term motion context video prediction.
//!
//! An external memory bank stores long-term motion contexts which are
//! aligned to short-term inputs through two-phase alternating training and
//! drive a convolutional-recurrent frame predictor.

pub mod autodiff;
pub mod error;

pub use error::{LmcError, Result};
