//! Gaussian random projection `Y = X R`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{DenseMatrix, RandomSource};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomProjectionModel<T> {
    /// `n × m`, entries i.i.d. `Normal(0, 1/m)`.
    pub matrix: DenseMatrix<T>,
}

/// Draws `R` with variance `1/m`, so `E‖xR‖² = ‖x‖²`.
pub fn fit_random_projection<T: Real>(n: usize, m: usize, rng: &mut RandomSource) -> Result<RandomProjectionModel<T>> {
    if m == 0 || m >= n {
        return Err(Error::precondition(format!(
            "random projection needs 1 <= m < n, got m = {m}, n = {n}"
        )));
    }
    Ok(RandomProjectionModel {
        matrix: rng.normal_matrix(n, m, (1.0 / m as f64).sqrt()),
    })
}

impl<T: Real> RandomProjectionModel<T> {
    pub fn transform(&self, data: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
        if data.cols() != self.matrix.rows() {
            return Err(Error::DimensionMismatch {
                expected: self.matrix.rows(),
                found: data.cols(),
            });
        }
        data.matmul(&self.matrix)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_matrix() {
        let a: RandomProjectionModel<f64> = fit_random_projection(10, 3, &mut RandomSource::new(5)).unwrap();
        let b: RandomProjectionModel<f64> = fit_random_projection(10, 3, &mut RandomSource::new(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn identity_padded_fixture_copies_columns() {
        let model = RandomProjectionModel {
            matrix: DenseMatrix::from_fn(4, 2, |i, j| if i == j { 1.0 } else { 0.0 }),
        };
        let x = DenseMatrix::from_fn(3, 4, |i, j| (i * 4 + j) as f64);
        let y = model.transform(&x).unwrap();
        assert_eq!(y, x.select_cols(&[0, 1]));
        assert!(model.transform(&DenseMatrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn rejects_non_reducing_target() {
        let mut rng = RandomSource::new(1);
        assert!(fit_random_projection::<f64>(5, 5, &mut rng).is_err());
        assert!(fit_random_projection::<f64>(5, 0, &mut rng).is_err());
    }
}
