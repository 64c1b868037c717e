//! Minimal dense-tensor engine with reverse-mode differentiation.

pub mod gradcheck;
pub mod graph;
pub mod tensor;

pub use gradcheck::{grad_check, DEFAULT_EPS};
pub use graph::{Axis, Graph, NodeId, COSINE_NORM_EPS};
pub use tensor::Tensor;
