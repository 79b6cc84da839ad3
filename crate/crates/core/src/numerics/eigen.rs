//! Symmetric eigendecomposition by cyclic Jacobi rotations.

use crate::error::{Error, Result};
use crate::scalar::Real;

use super::DenseMatrix;

const MAX_SWEEPS: usize = 100;

/// Eigenvalues (descending) and orthonormal eigenvectors (as columns).
#[derive(Clone, Debug)]
pub struct SymmetricEigen<T> {
    pub eigenvalues: Vec<T>,
    pub eigenvectors: DenseMatrix<T>,
}

/// Decomposes a symmetric matrix.
///
/// Each eigenvector is signed so that its largest-magnitude entry is positive
/// (the first such entry on exact ties).
pub fn symmetric_eigendecomposition<T: Real>(a: &DenseMatrix<T>) -> Result<SymmetricEigen<T>> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: a.cols(),
        });
    }
    let scale = a.max_abs().max(T::one());
    let sym_tol = T::c(1e-9).max(T::epsilon() * T::c(64.0)) * scale;
    let mut asym = T::zero();
    for i in 0..n {
        for j in (i + 1)..n {
            asym = asym.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    if asym > sym_tol {
        return Err(Error::NotSymmetric {
            asymmetry: asym.to_f64_lossy(),
        });
    }

    let mut m = DenseMatrix::from_fn(n, n, |i, j| (a[(i, j)] + a[(j, i)]) * T::c(0.5));
    let mut v = DenseMatrix::<T>::identity(n);
    let norm = m.frobenius_norm();

    for _ in 0..MAX_SWEEPS {
        let mut off = T::zero();
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[(i, j)] * m[(i, j)];
            }
        }
        if off.sqrt() <= T::epsilon() * norm || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq.abs() <= T::min_positive_value() {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (T::c(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                rotate(&mut m, &mut v, p, q, c, s);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].partial_cmp(&m[(i, i)]).unwrap_or(std::cmp::Ordering::Equal));
    let eigenvalues: Vec<T> = order.iter().map(|&i| m[(i, i)]).collect();
    let mut eigenvectors = DenseMatrix::<T>::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        let mut pivot = 0;
        for k in 0..n {
            if v[(k, src)].abs() > v[(pivot, src)].abs() {
                pivot = k;
            }
        }
        let sign = if v[(pivot, src)] < T::zero() {
            -T::one()
        } else {
            T::one()
        };
        for k in 0..n {
            eigenvectors[(k, col)] = sign * v[(k, src)];
        }
    }
    Ok(SymmetricEigen {
        eigenvalues,
        eigenvectors,
    })
}

fn rotate<T: Real>(m: &mut DenseMatrix<T>, v: &mut DenseMatrix<T>, p: usize, q: usize, c: T, s: T) {
    let n = m.rows();
    for k in 0..n {
        let kp = m[(k, p)];
        let kq = m[(k, q)];
        m[(k, p)] = c * kp - s * kq;
        m[(k, q)] = s * kp + c * kq;
    }
    for k in 0..n {
        let pk = m[(p, k)];
        let qk = m[(q, k)];
        m[(p, k)] = c * pk - s * qk;
        m[(q, k)] = s * pk + c * qk;
    }
    m[(p, q)] = T::zero();
    m[(q, p)] = T::zero();
    for k in 0..n {
        let kp = v[(k, p)];
        let kq = v[(k, q)];
        v[(k, p)] = c * kp - s * kq;
        v[(k, q)] = s * kp + c * kq;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RandomSource;

    type M = DenseMatrix<f64>;

    fn random_symmetric(n: usize, rng: &mut RandomSource) -> M {
        let mut a = M::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let x = rng.normal();
                a[(i, j)] = x;
                a[(j, i)] = x;
            }
        }
        a
    }

    #[test]
    fn identity_has_unit_spectrum() {
        let e = symmetric_eigendecomposition(&M::identity(3)).unwrap();
        assert_eq!(e.eigenvalues, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn diagonal_is_axis_aligned() {
        let e = symmetric_eigendecomposition(&M::diag(&[1.0, 4.0])).unwrap();
        assert_eq!(e.eigenvalues, vec![4.0, 1.0]);
        assert_eq!(e.eigenvectors.as_slice(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn two_by_two_closed_form() {
        // λ = (a+c)/2 ± √(((a-c)/2)² + b²)
        let (a, b, c) = (2.0, 1.5, -0.5);
        let m = M::from_rows(&[[a, b], [b, c]]).unwrap();
        let e = symmetric_eigendecomposition(&m).unwrap();
        let mid = (a + c) / 2.0;
        let rad = (((a - c) / 2.0f64).powi(2) + b * b).sqrt();
        assert!((e.eigenvalues[0] - (mid + rad)).abs() < 1e-14);
        assert!((e.eigenvalues[1] - (mid - rad)).abs() < 1e-14);
    }

    #[test]
    fn residuals_on_random_5x5() {
        let mut rng = RandomSource::new(11);
        let a = random_symmetric(5, &mut rng);
        let e = symmetric_eigendecomposition(&a).unwrap();
        let norm = a.frobenius_norm();
        for k in 0..5 {
            let vk = e.eigenvectors.column(k);
            let av = a.matvec(&vk).unwrap();
            let res: f64 = av
                .iter()
                .zip(&vk)
                .map(|(x, y)| (x - e.eigenvalues[k] * y).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(res < 1e-8 * norm);
        }
        for w in e.eigenvalues.windows(2) {
            assert!(w[0] >= w[1]);
        }
    }

    #[test]
    fn sign_convention_holds() {
        let mut rng = RandomSource::new(5);
        let a = random_symmetric(6, &mut rng);
        let e = symmetric_eigendecomposition(&a).unwrap();
        for k in 0..6 {
            let col = e.eigenvectors.column(k);
            let best = col
                .iter()
                .copied()
                .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
            assert!(best > 0.0);
        }
    }

    #[test]
    fn rejects_asymmetric() {
        let m = M::from_rows(&[[1.0, 2.0], [0.0, 1.0]]).unwrap();
        assert!(matches!(
            symmetric_eigendecomposition(&m),
            Err(Error::NotSymmetric { .. })
        ));
    }

    #[test]
    fn single_precision_decomposes() {
        let m = DenseMatrix::<f32>::from_rows(&[[2.0f32, 1.0], [1.0, 2.0]]).unwrap();
        let e = symmetric_eigendecomposition(&m).unwrap();
        assert!((e.eigenvalues[0] - 3.0).abs() < 1e-5);
        assert!((e.eigenvalues[1] - 1.0).abs() < 1e-5);
    }
}
