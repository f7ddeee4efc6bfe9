//! A Gaussian process latent variable model for mixed-type tabular data.
//!
//! Every column gets its own likelihood (gaussian, bernoulli, poisson,
//! beta, categorical) on top of a shared latent space. Inference is sparse
//! variational with inducing points and an amortised encoder, and the
//! expected log-likelihood uses Gauss-Hermite quadrature.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below name the common instantiations.

pub mod data;
pub mod error;
pub mod eval;
pub mod grad;
pub mod kernel;
pub mod likelihood;
pub mod linalg;
pub mod model;
pub mod objective;
pub mod quadrature;
pub mod recognition;
pub mod scalar;
pub mod seed;
pub mod special;
pub mod train;
pub mod variational;

pub use data::{Dataset, Schema};
pub use error::{Error, Result};
pub use likelihood::LikelihoodKind;
pub use model::{Model, ModelConfig, ParamVector};
pub use objective::{Estimator, ObjectiveConfig};
pub use scalar::Scalar;
pub use train::{Checkpoint, TrainConfig};

pub type Mat64 = linalg::Mat<f64>;
pub type Mat32 = linalg::Mat<f32>;
pub type Dataset64 = data::Dataset<f64>;
pub type Dataset32 = data::Dataset<f32>;
pub type Params64 = model::ParamVector<f64>;
pub type Params32 = model::ParamVector<f32>;
pub type ModelParams64 = model::ModelParams<f64>;
pub type ModelParams32 = model::ModelParams<f32>;
pub type KernelHypers64 = kernel::KernelHypers<f64>;
pub type KernelHypers32 = kernel::KernelHypers<f32>;
