//! Principal component analysis via covariance eigendecomposition.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{covariance_matrix, symmetric_eigendecomposition, DenseMatrix};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaModel<T> {
    pub mean: Vec<T>,
    /// `n × m`, orthonormal columns ordered by decreasing eigenvalue.
    pub components: DenseMatrix<T>,
    /// Full covariance spectrum, descending.
    pub eigenvalues: Vec<T>,
}

/// Fits the top-`m` principal axes of `train`.
pub fn fit_pca<T: Real>(train: &DenseMatrix<T>, m: usize) -> Result<PcaModel<T>> {
    let n = train.cols();
    if m == 0 || m > n {
        return Err(Error::precondition(format!(
            "PCA target dimension {m} must lie in 1..={n}"
        )));
    }
    let mean = train.column_means();
    let cov = covariance_matrix(train, &mean)?;
    let eig = symmetric_eigendecomposition(&cov)?;
    let cols: Vec<usize> = (0..m).collect();
    Ok(PcaModel {
        mean,
        components: eig.eigenvectors.select_cols(&cols),
        eigenvalues: eig.eigenvalues,
    })
}

impl<T: Real> PcaModel<T> {
    pub fn input_dim(&self) -> usize {
        self.components.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.components.cols()
    }

    /// `(data - μ) · components`.
    pub fn transform(&self, data: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
        if data.cols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                found: data.cols(),
            });
        }
        let centered = DenseMatrix::from_fn(data.rows(), data.cols(), |i, j| {
            data[(i, j)] - self.mean[j]
        });
        centered.matmul(&self.components)
    }

    /// Share of total variance captured by the kept components.
    pub fn explained_variance_ratio(&self) -> T {
        let total: T = self.eigenvalues.iter().copied().sum();
        if total <= T::zero() {
            return T::zero();
        }
        self.eigenvalues[..self.output_dim()].iter().copied().sum::<T>() / total
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RandomSource;

    type M = DenseMatrix<f64>;

    #[test]
    fn axis_aligned_variance() {
        // x-axis spread 2 (variance 4), y-axis spread 1
        let data = M::from_rows(&[[2.0, 0.0], [-2.0, 0.0], [0.0, 1.0], [0.0, -1.0]]).unwrap();
        let p = fit_pca(&data, 1).unwrap();
        assert_eq!(p.components.as_slice(), &[1.0, 0.0]);
        assert!(p.eigenvalues[0] > p.eigenvalues[1]);
    }

    #[test]
    fn mean_maps_to_origin() {
        let mut rng = RandomSource::new(2);
        let data: M = rng.normal_matrix(20, 4, 1.0);
        let p = fit_pca(&data, 2).unwrap();
        let mu = M::from_rows(&[p.mean.clone()]).unwrap();
        let z = p.transform(&mu).unwrap();
        assert!(z.as_slice().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn full_rank_is_isometry() {
        let mut rng = RandomSource::new(3);
        let data: M = rng.normal_matrix(15, 5, 2.0);
        let p = fit_pca(&data, 5).unwrap();
        let z = p.transform(&data).unwrap();
        for i in 0..15 {
            for j in 0..15 {
                let dx: f64 = (0..5).map(|k| (data[(i, k)] - data[(j, k)]).powi(2)).sum();
                let dz: f64 = (0..5).map(|k| (z[(i, k)] - z[(j, k)]).powi(2)).sum();
                assert!((dx.sqrt() - dz.sqrt()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn target_dimension_bounds() {
        let data = M::zeros(4, 3);
        assert!(fit_pca(&data, 0).is_err());
        assert!(fit_pca(&data, 4).is_err());
        assert!(matches!(
            fit_pca(&M::zeros(1, 3), 2),
            Err(Error::InsufficientSamples { .. })
        ));
    }

    #[test]
    fn generic_over_f32() {
        let data = DenseMatrix::<f32>::from_rows(&[[2.0f32, 0.1], [-2.0, -0.1], [0.0, 1.0], [0.0, -1.0]]).unwrap();
        let p = fit_pca(&data, 1).unwrap();
        assert!(p.components[(0, 0)] > 0.99);
        assert!((p.explained_variance_ratio() - 0.8).abs() < 0.05);
    }
}
