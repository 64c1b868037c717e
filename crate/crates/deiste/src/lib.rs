//! Sentence-pair entailment over word-to-word interaction matrices.
//!
//! The model embeds both sentences, compares every word pair by cosine
//! similarity, and feeds two convolutional views of the result into a
//! logistic classifier: an importance-weighted dynamic convolution and a
//! position-aware attentive convolution. Everything is trained end to
//! end with AdaGrad on top of a small reverse-mode tensor engine.

// masked and windowed kernels read better with explicit indices
#![allow(clippy::needless_range_loop)]

pub mod baselines;
pub mod cli;
pub mod data;
pub mod encoders;
pub mod error;
pub mod interaction;
pub mod model;
pub mod numerics;
pub mod text;

pub use error::{Error, Result};
