//! Training-data attribution at dataset granularity: unlearning-based scores,
//! gradient and influence-function baselines, and retraining ground truth on
//! a small autodiff language model.

// `!(x > 0.0)` style checks are kept on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attribution;
pub mod baselines;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod groundtruth;
pub mod hvp;
pub mod model;
pub mod optim;
pub mod params;
pub mod partition;
pub mod scalar;
pub mod stats;
pub mod tape;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use model::{Example, FeedForwardLm, ModelConfig};
pub use scalar::{Dual, Scalar};

/// Working-precision parameter vector.
pub type Params = params::ParamVector<f64>;
/// Single-precision parameter vector for cheap experiments.
pub type Params32 = params::ParamVector<f32>;
/// Working-precision tensor.
pub type Tensor64 = tensor::Tensor<f64>;
