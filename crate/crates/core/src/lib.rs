//! Dimensionality reduction followed by unsupervised anomaly detection on
//! multivariate time series.
//!
//! The pipeline is `dataset` → `reduce` (PCA, random projection, UMAP, t-SNE)
//! → `mutant` or `transformer` detector → `eval`, with `runner` driving grids
//! of such cells and timing them.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod mutant;
pub mod nn;
pub mod numerics;
pub mod persist;
pub mod reduce;
pub mod runner;
pub mod scalar;
pub mod transformer;

pub use error::{Error, Result};
pub use numerics::{DenseMatrix, RandomSource};
pub use scalar::Real;

/// Double-precision matrix used throughout the pipeline.
pub type Matrix = DenseMatrix<f64>;
/// Single-precision matrix for the generic kernels.
pub type Matrix32 = DenseMatrix<f32>;
