//! Feed-forward networks trained with multi-sample, importance weighted
//! noise gradients.
//!
//! Noise injection (dropout or additive Gaussian) turns hidden units into
//! random variables. Training on one noise sample per example maximizes the
//! loose bound `E[log p(y | x, ε)]`; drawing S samples per example and
//! weighting their gradients by normalized likelihood maximizes
//! `E[log (1/S) Σ p(y | x, ε_i)]`, which tightens toward the marginal
//! likelihood as S grows.
//!
//! Modules, bottom-up:
//!
//! - [`ndcore`]: dense tensors and stable reductions
//! - [`net`]: layers, noise injection, forward and backward passes
//! - [`objective`]: importance weights, the weighted gradient, exact and
//!   Monte Carlo bound evaluation
//! - [`trainer`]: mini-batch momentum SGD with S samples per example
//! - [`data`]: synthetic generators and the IDX loader
//! - [`gradcheck`]: finite-difference verification of the gradients
//!
//! All numeric code is generic over [`Real`]; the aliases below fix `f64`.

pub mod data;
pub mod error;
pub mod gradcheck;
pub mod ndcore;
pub mod net;
pub mod objective;
pub mod rng;
pub mod scalar;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Tensor = ndcore::Tensor<f64>;
pub type NetworkParams = net::NetworkParams<f64>;
pub type NoiseDraw = net::NoiseDraw<f64>;
pub type ForwardTrace = net::ForwardTrace<f64>;
pub type SampleEvaluation = objective::SampleEvaluation<f64>;
pub type ImportanceWeights = objective::ImportanceWeights<f64>;
pub type Dataset = data::Dataset<f64>;
pub type Split = data::Split<f64>;

pub type TensorF32 = ndcore::Tensor<f32>;
pub type NetworkParamsF32 = net::NetworkParams<f32>;
pub type DatasetF32 = data::Dataset<f32>;
