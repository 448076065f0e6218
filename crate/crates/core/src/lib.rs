//! Training-free transductive zero-shot classification by fusing semantic
//! class distributions with visual cluster structure.
//!
//! A vision-language model supplies per-sample class probabilities `Y`; one
//! or more vision encoders supply feature matrices. Each feature matrix gets a
//! Gaussian mixture with a shared diagonal covariance whose posterior `P`
//! is fused with `Y` through entropic optimal transport, and the resulting
//! transport plan `Q` in turn refits the mixtures. See [`fusion::run`].
//!
//! The numeric core is generic over [`Scalar`] (`f32`, `f64`); the aliases
//! below pin the `f64` types the file formats and CLI use.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod gmm;
pub mod io;
pub mod matrix;
pub mod prob;
pub mod rng;
pub mod scalar;
pub mod sinkhorn;
pub mod synth;

pub use error::{Error, Result};
pub use fusion::{run, run_no_joint, ColMarginal, FusionConfig, FusionResult, TraceRecord};
pub use gmm::{GmmParams, PiMode};
pub use matrix::Matrix;
pub use prob::{FeatureMatrix, ProbMatrix};
pub use scalar::Scalar;
pub use sinkhorn::{sinkhorn_solve, Marginals, SinkhornResult};

pub type Real = f64;

pub type Matrix64 = Matrix<f64>;
pub type Matrix32 = Matrix<f32>;
pub type ProbMatrix64 = ProbMatrix<f64>;
pub type ProbMatrix32 = ProbMatrix<f32>;
pub type FeatureMatrix64 = FeatureMatrix<f64>;
pub type FeatureMatrix32 = FeatureMatrix<f32>;
pub type GmmParams64 = GmmParams<f64>;
pub type GmmParams32 = GmmParams<f32>;
pub type Marginals64 = Marginals<f64>;
pub type Marginals32 = Marginals<f32>;
pub type SinkhornResult64 = SinkhornResult<f64>;
pub type FusionConfig64 = FusionConfig<f64>;
pub type FusionConfig32 = FusionConfig<f32>;
pub type FusionResult64 = FusionResult<f64>;
pub type FusionResult32 = FusionResult<f32>;
