use crate::error::{Error, Result};
use crate::scalar::Real;

use super::DenseMatrix;

/// Sample covariance `(1/(m-1)) Σ (xᵢ-μ)(xᵢ-μ)ᵀ` around the supplied mean.
///
/// The output is symmetric by construction (upper triangle mirrored).
pub fn covariance_matrix<T: Real>(data: &DenseMatrix<T>, mean: &[T]) -> Result<DenseMatrix<T>> {
    let (m, d) = data.shape();
    if m < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: m });
    }
    if mean.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: mean.len(),
        });
    }
    let mut acc = DenseMatrix::<T>::zeros(d, d);
    let mut centered = vec![T::zero(); d];
    for row in data.row_iter() {
        for ((c, &x), &mu) in centered.iter_mut().zip(row).zip(mean) {
            *c = x - mu;
        }
        for i in 0..d {
            let ci = centered[i];
            if ci == T::zero() {
                continue;
            }
            let out = acc.row_mut(i);
            for j in i..d {
                out[j] += ci * centered[j];
            }
        }
    }
    let denom = T::c((m - 1) as f64);
    for i in 0..d {
        for j in i..d {
            let v = acc[(i, j)] / denom;
            acc[(i, j)] = v;
            acc[(j, i)] = v;
        }
    }
    Ok(acc)
}

/// Pearson correlation, clamped to `[-1, 1]`.
pub fn pearson_correlation<T: Real>(x: &[T], y: &[T]) -> Result<T> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    let nf = T::c(n as f64);
    let mx = x.iter().copied().sum::<T>() / nf;
    let my = y.iter().copied().sum::<T>() / nf;
    let (mut sxy, mut sxx, mut syy) = (T::zero(), T::zero(), T::zero());
    for (&a, &b) in x.iter().zip(y) {
        let da = a - mx;
        let db = b - my;
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx <= T::zero() || syy <= T::zero() {
        return Err(Error::ZeroVariance);
    }
    let r = sxy / (sxx * syy).sqrt();
    Ok(r.max(-T::one()).min(T::one()))
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<T: Real>(m: &DenseMatrix<T>) -> DenseMatrix<T> {
    let mut out = m.clone();
    for i in 0..out.rows() {
        softmax_in_place(out.row_mut(i));
    }
    out
}

pub fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Row-wise `KL(p‖q) = Σ pᵢ ln(pᵢ/qᵢ)` with `0·ln(0/q) = 0`.
pub fn kl_divergence_rows<T: Real>(p: &DenseMatrix<T>, q: &DenseMatrix<T>) -> Result<Vec<T>> {
    if p.shape() != q.shape() {
        return Err(Error::DimensionMismatch {
            expected: p.rows() * p.cols(),
            found: q.rows() * q.cols(),
        });
    }
    (0..p.rows())
        .map(|i| {
            kl_divergence(p.row(i), q.row(i)).map_err(|e| match e {
                Error::InfiniteDivergence { col, .. } => Error::InfiniteDivergence { row: i, col },
                other => other,
            })
        })
        .collect()
}

pub fn kl_divergence<T: Real>(p: &[T], q: &[T]) -> Result<T> {
    let mut kl = T::zero();
    for (j, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi <= T::zero() {
            continue;
        }
        if qi <= T::zero() {
            return Err(Error::InfiniteDivergence { row: 0, col: j });
        }
        kl += pi * (pi / qi).ln();
    }
    Ok(kl)
}

pub fn mean<T: Real>(x: &[T]) -> T {
    x.iter().copied().sum::<T>() / T::c(x.len().max(1) as f64)
}

/// Population variance (divides by `n`).
pub fn variance<T: Real>(x: &[T]) -> T {
    let mu = mean(x);
    x.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / T::c(x.len().max(1) as f64)
}

/// Linear-interpolated quantile of unsorted data (`q` in `[0,1]`).
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

#[cfg(test)]
mod tests {
    use super::*;

    type M = DenseMatrix<f64>;

    #[test]
    fn covariance_of_identical_rows_is_zero() {
        let data = M::from_rows(&[[3.0, -1.0], [3.0, -1.0]]).unwrap();
        let c = covariance_matrix(&data, &[3.0, -1.0]).unwrap();
        assert!(c.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn covariance_hand_sum() {
        let data = M::from_rows(&[[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]]).unwrap();
        let c = covariance_matrix(&data, &[0.0, 0.0]).unwrap();
        // outer products sum to [[2,0],[0,2]], divided by m-1 = 3
        let expected = [2.0 / 3.0, 0.0, 0.0, 2.0 / 3.0];
        for (a, b) in c.as_slice().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn covariance_single_row_fails() {
        let data = M::from_rows(&[[1.0, 2.0]]).unwrap();
        assert!(matches!(
            covariance_matrix(&data, &[1.0, 2.0]),
            Err(Error::InsufficientSamples { .. })
        ));
    }

    #[test]
    fn pearson_examples() {
        let x = [1.0f64, 2.0, 3.0];
        assert!((pearson_correlation(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson_correlation(&x, &neg).unwrap() + 1.0).abs() < 1e-15);
        // x̄ = 2, ȳ = 7/3; sxy = 3, sxx = 2, syy = 14/3 → 3/√(28/3)
        let expected = 3.0 / (28.0f64 / 3.0).sqrt();
        let r = pearson_correlation(&x, &[1.0, 2.0, 4.0]).unwrap();
        assert!((r - expected).abs() < 1e-14, "{r} vs {expected}");
        assert!(matches!(
            pearson_correlation(&x, &[5.0, 5.0, 5.0]),
            Err(Error::ZeroVariance)
        ));
    }

    #[test]
    fn softmax_examples() {
        let m = M::from_rows(&[[2.0, 2.0, 2.0, 2.0]]).unwrap();
        assert!(softmax_rows(&m).as_slice().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let s = softmax_rows(&M::from_rows(&[[0.0, 3f64.ln()]]).unwrap());
        assert!((s[(0, 0)] - 0.25).abs() < 1e-15 && (s[(0, 1)] - 0.75).abs() < 1e-15);
        let shifted = softmax_rows(&M::from_rows(&[[1000.0, 1000.0 + 3f64.ln()]]).unwrap());
        assert!((shifted[(0, 1)] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn kl_examples() {
        let p = M::from_rows(&[[1.0, 0.0]]).unwrap();
        let q = M::from_rows(&[[0.5, 0.5]]).unwrap();
        let kl = kl_divergence_rows(&p, &q).unwrap();
        assert!((kl[0] - 2f64.ln()).abs() < 1e-15);
        assert_eq!(kl_divergence_rows(&q, &q).unwrap(), vec![0.0]);
        assert!(matches!(
            kl_divergence_rows(&q, &p),
            Err(Error::InfiniteDivergence { row: 0, col: 1 })
        ));
    }

    #[test]
    fn quantile_interpolates() {
        assert_eq!(quantile(&[4.0, 1.0, 3.0, 2.0], 0.5), 2.5);
        assert_eq!(quantile(&[1.0, 2.0], 1.0), 2.0);
    }

    #[test]
    fn works_in_single_precision() {
        let x = [1.0f32, 2.0, 3.0, 4.0];
        let y = [2.0f32, 4.1, 5.9, 8.0];
        assert!(pearson_correlation(&x, &y).unwrap() > 0.99);
        let s = softmax_rows(&DenseMatrix::<f32>::from_rows(&[[0.0f32, 1.0]]).unwrap());
        assert!((s.as_slice().iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }
}
