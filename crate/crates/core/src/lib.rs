//! Lung-cancer detection toolkit: synthetic cohorts, leakage-free
//! preprocessing, four base classifiers, dynamic ensemble selection,
//! Shapley explanations and the evaluation statistics around them.
//!
//! Numeric routines are generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the precision the pipeline runs at.

// `!(x > y)` is deliberate: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::type_complexity)]

pub mod cohort;
pub mod des;
pub mod eval;
pub mod explain;
pub mod matrix;
pub mod models;
pub mod pipeline;
pub mod preprocess;
pub mod scalar;
pub mod seed;
pub mod stats;

pub use matrix::{Dataset, FeatureSchema, Matrix};
pub use scalar::Scalar;

/// Precision used by the pipeline and CLI.
pub type Real = f64;
pub type RealMatrix = Matrix<Real>;
pub type RealDataset = Dataset<Real>;
