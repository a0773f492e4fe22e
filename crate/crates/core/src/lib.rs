//! Two-stage robust linear regression with the Welsch loss, comparator
//! M-estimators, theory diagnostics and a Monte Carlo experiment harness.

// `!(x > 0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dataset;
pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod io;
pub mod linalg;
pub mod loss;
pub mod model_selection;
pub mod optimizer;
pub mod scalar;
pub mod simulation;

pub use dataset::Dataset;
pub use error::{Error, Result};
pub use estimators::{FitConfig, FitResult, ScaleMode};
pub use linalg::Matrix;
pub use loss::{LossFamily, LossSpec};
pub use optimizer::{OptimizerConfig, Termination};
pub use scalar::Scalar;

pub type Dataset64 = Dataset<f64>;
pub type Dataset32 = Dataset<f32>;
pub type FitResult64 = FitResult<f64>;
pub type FitResult32 = FitResult<f32>;
pub type FitConfig64 = FitConfig<f64>;
pub type FitConfig32 = FitConfig<f32>;
pub type LossSpec64 = LossSpec<f64>;
pub type LossSpec32 = LossSpec<f32>;
pub type Matrix64 = Matrix<f64>;
pub type Matrix32 = Matrix<f32>;
