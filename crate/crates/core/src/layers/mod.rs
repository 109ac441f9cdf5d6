//! Differentiable building blocks with explicit forward and backward passes.
//!
//! Each layer caches what its backward pass needs during `forward`, and
//! `backward` consumes that cache: a second `backward` without a fresh
//! `forward` fails with [`crate::Error::MissingCache`]. The `infer` methods
//! take `&self`, cache nothing, and use inference statistics.

mod activation;
mod batch_norm;
mod dense;
mod merge;

use serde::{Deserialize, Serialize};

pub use activation::{relu, relu_backward, sigmoid, sigmoid_backward, Relu, Sigmoid};
pub use batch_norm::{BatchNorm, BatchNormConfig};
pub use dense::Dense;
pub use merge::{Concat, ResidualAdd};

/// Whether batch normalization uses batch statistics or running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Train,
    Eval,
}
