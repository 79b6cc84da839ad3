//! Exact O(N²) t-SNE with perplexity calibration, early exaggeration and
//! momentum.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Matrix;

use super::neighbors::squared_distance;
use super::pca::fit_pca;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneParams {
    pub perplexity: f64,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    pub iterations: usize,
    /// `None` picks `max(N / exaggeration / 4, 50)`.
    pub learning_rate: Option<f64>,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    /// Largest combined row count accepted by the exact method.
    pub max_rows: usize,
}

impl Default for TsneParams {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            exaggeration: 12.0,
            exaggeration_iters: 250,
            iterations: 1000,
            learning_rate: None,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            max_rows: 20_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TsneModel {
    pub params: TsneParams,
    /// Embedding of `[train; test]` rows.
    pub embedding: Matrix,
    pub train_range: std::ops::Range<usize>,
    pub test_range: std::ops::Range<usize>,
    /// KL(P‖Q) per iteration, with P unexaggerated.
    pub kl_trace: Vec<f64>,
}

const ENTROPY_TOL: f64 = 1e-6;
const BETA_ITERS: usize = 200;

/// Conditional row `p_{·|i}` for squared distances `d2` (self excluded by the
/// caller) calibrated so its entropy is `ln(perplexity)`. Returns the row and
/// the precision `β = 1/(2σ²)`.
pub fn calibrate_row(d2: &[f64], perplexity: f64) -> (Vec<f64>, f64) {
    let target = perplexity.ln();
    let dmin = d2.iter().copied().fold(f64::INFINITY, f64::min);
    let mut beta = 1.0;
    let (mut lo, mut hi) = (0.0, f64::INFINITY);
    let mut p = vec![0.0; d2.len()];
    for _ in 0..BETA_ITERS {
        // shifting by dmin leaves the normalized row unchanged and avoids underflow
        let mut sum = 0.0;
        for (pj, &d) in p.iter_mut().zip(d2) {
            *pj = (-(d - dmin) * beta).exp();
            sum += *pj;
        }
        let mut weighted = 0.0;
        for (pj, &d) in p.iter_mut().zip(d2) {
            *pj /= sum;
            weighted += *pj * (d - dmin);
        }
        let entropy = sum.ln() + beta * weighted;
        let diff = entropy - target;
        if diff.abs() < ENTROPY_TOL {
            break;
        }
        if diff > 0.0 {
            lo = beta;
            beta = if hi.is_infinite() { beta * 2.0 } else { (beta + hi) / 2.0 };
        } else {
            hi = beta;
            beta = (beta + lo) / 2.0;
        }
    }
    (p, beta)
}

pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

/// Conditional matrix: row `i` holds `p_{j|i}` with a zero diagonal.
pub fn conditional_affinities(data: &Matrix, perplexity: f64) -> Matrix {
    let n = data.rows();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let d2: Vec<f64> = (0..n)
                .filter(|&j| j != i)
                .map(|j| squared_distance(data.row(i), data.row(j)))
                .collect();
            let (p, _) = calibrate_row(&d2, perplexity);
            let mut full = Vec::with_capacity(n);
            full.extend_from_slice(&p[..i]);
            full.push(0.0);
            full.extend_from_slice(&p[i..]);
            full
        })
        .collect();
    let mut out = Matrix::zeros(n, n);
    for (i, r) in rows.into_iter().enumerate() {
        out.row_mut(i).copy_from_slice(&r);
    }
    out
}

/// `p_ij = (p_{j|i} + p_{i|j}) / 2N`.
pub fn joint_affinities(conditional: &Matrix) -> Matrix {
    let n = conditional.rows();
    Matrix::from_fn(n, n, |i, j| {
        (conditional[(i, j)] + conditional[(j, i)]) / (2.0 * n as f64)
    })
}

/// Jointly embeds `train` and `test` (transductive) into `m ≤ 3` dimensions.
pub fn fit_tsne_joint(train: &Matrix, test: &Matrix, m: usize, params: &TsneParams) -> Result<TsneModel> {
    if m == 0 || m > 3 {
        return Err(Error::precondition(format!(
            "t-SNE target dimension must be 1..=3, got {m}"
        )));
    }
    let data = train.vstack(test)?;
    let n = data.rows();
    if n > params.max_rows {
        return Err(Error::TooLargeForExact {
            rows: n,
            cap: params.max_rows,
        });
    }
    if m >= data.cols() {
        return Err(Error::precondition(format!(
            "t-SNE target dimension {m} must be below input dimension {}",
            data.cols()
        )));
    }
    let effective_perplexity = params.perplexity.min((n.saturating_sub(1)) as f64 / 3.0).max(1.0);
    if n < 4 {
        return Err(Error::InsufficientSamples { needed: 4, got: n });
    }
    let p = joint_affinities(&conditional_affinities(&data, effective_perplexity));
    let (embedding, kl_trace) = optimize(&p, pca_start(&data, m)?, params);
    Ok(TsneModel {
        params: params.clone(),
        embedding,
        train_range: 0..train.rows(),
        test_range: train.rows()..n,
        kl_trace,
    })
}

/// PCA coordinates rescaled so the first axis has standard deviation 1e-4.
fn pca_start(data: &Matrix, m: usize) -> Result<Matrix> {
    let y = fit_pca(data, m)?.transform(data)?;
    let first = y.column(0);
    let sd = crate::numerics::variance(&first).sqrt();
    let s = if sd > 0.0 { 1e-4 / sd } else { 1.0 };
    Ok(y.scale(s))
}

fn optimize(p: &Matrix, mut y: Matrix, params: &TsneParams) -> (Matrix, Vec<f64>) {
    let n = y.rows();
    let m = y.cols();
    let lr = params
        .learning_rate
        .unwrap_or_else(|| (n as f64 / params.exaggeration / 4.0).max(50.0));
    let mut update = Matrix::zeros(n, m);
    let mut gains = Matrix::filled(n, m, 1.0);
    let mut trace = Vec::with_capacity(params.iterations);
    for iter in 0..params.iterations {
        let exaggerate = iter < params.exaggeration_iters;
        let scale = if exaggerate { params.exaggeration } else { 1.0 };
        let momentum = if exaggerate {
            params.initial_momentum
        } else {
            params.final_momentum
        };
        let (grad, kl) = gradient(p, &y, scale);
        trace.push(kl);
        for idx in 0..n * m {
            let g = grad.as_slice()[idx];
            let u = update.as_slice()[idx];
            let gain = &mut gains.as_mut_slice()[idx];
            *gain = if (g > 0.0) != (u > 0.0) { *gain + 0.2 } else { (*gain * 0.8).max(0.01) };
            let nu = momentum * u - lr * *gain * g;
            update.as_mut_slice()[idx] = nu;
            y.as_mut_slice()[idx] += nu;
        }
        // keep the layout centered
        let mean = y.column_means();
        for i in 0..n {
            for c in 0..m {
                y[(i, c)] -= mean[c];
            }
        }
    }
    (y, trace)
}

/// Gradient of KL(scale·P ‖ Q) and the unexaggerated KL(P ‖ Q).
fn gradient(p: &Matrix, y: &Matrix, scale: f64) -> (Matrix, f64) {
    let n = y.rows();
    let m = y.cols();
    let kernel_rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| if i == j { 0.0 } else { 1.0 / (1.0 + squared_distance(y.row(i), y.row(j))) })
                .collect()
        })
        .collect();
    let z: f64 = kernel_rows.iter().map(|r| r.iter().sum::<f64>()).sum();
    let rows: Vec<(Vec<f64>, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut g = vec![0.0; m];
            let mut kl = 0.0;
            let yi = y.row(i);
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = kernel_rows[i][j];
                let q = w / z;
                let pij = p[(i, j)];
                if pij > 0.0 {
                    kl += pij * (pij / q.max(1e-300)).ln();
                }
                let coeff = 4.0 * (scale * pij - q) * w;
                let yj = y.row(j);
                for c in 0..m {
                    g[c] += coeff * (yi[c] - yj[c]);
                }
            }
            (g, kl)
        })
        .collect();
    let mut grad = Matrix::zeros(n, m);
    let mut kl = 0.0;
    for (i, (g, k)) in rows.into_iter().enumerate() {
        grad.row_mut(i).copy_from_slice(&g);
        kl += k;
    }
    (grad, kl)
}

/// Places out-of-sample rows at the perplexity-weighted average of their
/// nearest embedded reference rows.
pub fn assign_out_of_sample(reference: &Matrix, embedding: &Matrix, queries: &Matrix, perplexity: f64) -> Matrix {
    let k = ((3.0 * perplexity).ceil() as usize).clamp(1, reference.rows());
    let knn = super::neighbors::exact_knn(reference, queries, k, false);
    let m = embedding.cols();
    let mut out = Matrix::zeros(queries.rows(), m);
    for (i, nbrs) in knn.iter().enumerate() {
        let d2: Vec<f64> = nbrs.iter().map(|&(_, d)| d * d).collect();
        let (w, _) = calibrate_row(&d2, perplexity.min(k as f64));
        for (&(j, _), wj) in nbrs.iter().zip(w) {
            for c in 0..m {
                out[(i, c)] += wj * embedding[(j, c)];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perplexity_calibration_on_line() {
        let data = Matrix::from_fn(100, 1, |i, _| i as f64);
        let cond = conditional_affinities(&data, 30.0);
        for i in 0..100 {
            let row = cond.row(i);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            assert!((entropy(row) - 30f64.ln()).abs() < 1e-4, "row {i}");
        }
    }

    #[test]
    fn three_point_normalization() {
        let data = Matrix::from_rows(&[[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]]).unwrap();
        let cond = conditional_affinities(&data, 1.5);
        for i in 0..3 {
            assert!((cond.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-10);
            assert_eq!(cond[(i, i)], 0.0);
        }
        let p = joint_affinities(&cond);
        assert!((p.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-10);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(p[(i, j)], p[(j, i)]);
            }
        }
    }

    #[test]
    fn rejects_high_target_and_oversize() {
        let a = Matrix::zeros(10, 5);
        assert!(fit_tsne_joint(&a, &a, 4, &TsneParams::default()).is_err());
        let params = TsneParams {
            max_rows: 15,
            ..Default::default()
        };
        assert!(matches!(
            fit_tsne_joint(&a, &a, 2, &params),
            Err(Error::TooLargeForExact { rows: 20, cap: 15 })
        ));
    }
}
