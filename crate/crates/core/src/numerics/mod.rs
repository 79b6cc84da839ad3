//! Dense kernels shared by the reducers and detectors.

mod eigen;
mod gradcheck;
mod matrix;
mod rng;
mod stats;

pub use eigen::{symmetric_eigendecomposition, SymmetricEigen};
pub use gradcheck::gradient_check;
pub use matrix::{gemm_nn, gemm_nt, gemm_tn, DenseMatrix};
pub use rng::{derive_seed, RandomSource};
pub use stats::{
    covariance_matrix, kl_divergence, kl_divergence_rows, mean, pearson_correlation, quantile,
    softmax_in_place, softmax_rows, variance,
};
