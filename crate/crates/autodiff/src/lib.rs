//! Reverse-mode automatic differentiation over small dense tensors.
//!
//! The library records dynamic computation graphs: each operation appends a
//! node with its forward value, and [`Graph::backward`] replays the tape in
//! reverse to accumulate exact analytic gradients. It provides precisely the
//! operations dense text encoders and distance losses need (matmul, conv1d,
//! embedding lookup, masked softmax, masked max-pooling, reductions) plus a
//! central-difference verification harness.
//!
//! All arithmetic is `f64`; forward results are bitwise deterministic for
//! fixed inputs.

mod error;
mod gradcheck;
mod graph;
mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, GradCheckOptions};
pub use graph::{Graph, NodeId};
pub use tensor::Tensor;
