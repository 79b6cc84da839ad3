use crate::error::{Error, Result};
use crate::numerics::gemm_nn;
use crate::Matrix;

/// Correlation graph over the variables of one window.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureGraph {
    /// Pearson correlations between columns; 0 wherever a column is constant.
    pub correlation: Matrix,
    /// `D̃^(-1/2) (A + I) D̃^(-1/2)` with `A_ij = |ρ_ij|` above the threshold.
    pub normalized: Matrix,
}

impl FeatureGraph {
    pub fn n_nodes(&self) -> usize {
        self.normalized.rows()
    }
}

/// Builds the thresholded correlation graph of an `L×d` window.
pub fn build_feature_graph(window: &Matrix, tau: f64) -> Result<FeatureGraph> {
    let (l, d) = window.shape();
    if l < 2 {
        return Err(Error::SeriesTooShort { length: l, window: 2 });
    }
    let correlation = correlation_matrix(window.as_slice(), l, d);
    let normalized = normalize_adjacency(&correlation, tau);
    Ok(FeatureGraph { correlation, normalized })
}

/// Column correlations of a row-major `l×d` block.
pub(crate) fn correlation_matrix(x: &[f64], l: usize, d: usize) -> Matrix {
    let mut mean = vec![0.0; d];
    for row in x.chunks_exact(d) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= l as f64;
    }
    // centered columns, stored transposed so each variable is contiguous
    let mut centered = vec![0.0; d * l];
    for (t, row) in x.chunks_exact(d).enumerate() {
        for j in 0..d {
            centered[j * l + t] = row[j] - mean[j];
        }
    }
    let norms: Vec<f64> = centered
        .chunks_exact(l)
        .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let scale = norms.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
    let mut rho = Matrix::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let value = if norms[i] <= 1e-12 * scale || norms[j] <= 1e-12 * scale {
                0.0
            } else if i == j {
                1.0
            } else {
                let ci = &centered[i * l..(i + 1) * l];
                let cj = &centered[j * l..(j + 1) * l];
                let dot: f64 = ci.iter().zip(cj).map(|(a, b)| a * b).sum();
                (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0)
            };
            rho[(i, j)] = value;
            rho[(j, i)] = value;
        }
    }
    rho
}

pub(crate) fn normalize_adjacency(rho: &Matrix, tau: f64) -> Matrix {
    let d = rho.rows();
    let mut a = Matrix::from_fn(d, d, |i, j| {
        if i == j {
            1.0
        } else {
            let r = rho[(i, j)].abs();
            if r >= tau {
                r
            } else {
                0.0
            }
        }
    });
    let inv_sqrt: Vec<f64> = (0..d)
        .map(|i| 1.0 / a.row(i).iter().sum::<f64>().sqrt())
        .collect();
    for i in 0..d {
        for j in 0..d {
            a[(i, j)] *= inv_sqrt[i] * inv_sqrt[j];
        }
    }
    a
}

/// One propagation step `ReLU(Ã_norm · H · W)`.
pub fn gcn_forward(graph: &FeatureGraph, h: &Matrix, w: &Matrix) -> Result<Matrix> {
    let d = graph.n_nodes();
    if h.rows() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: h.rows(),
        });
    }
    if w.rows() != h.cols() {
        return Err(Error::DimensionMismatch {
            expected: h.cols(),
            found: w.rows(),
        });
    }
    let mut ah = vec![0.0; d * h.cols()];
    gemm_nn(d, d, h.cols(), graph.normalized.as_slice(), h.as_slice(), &mut ah);
    let mut out = vec![0.0; d * w.cols()];
    gemm_nn(d, h.cols(), w.cols(), &ah, w.as_slice(), &mut out);
    for v in &mut out {
        *v = v.max(0.0);
    }
    Matrix::from_vec(d, w.cols(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RandomSource;
    use proptest::prelude::*;

    #[test]
    fn perfectly_correlated_pair() {
        let w = Matrix::from_fn(10, 2, |t, j| if j == 0 { t as f64 } else { 3.0 * t as f64 - 1.0 });
        let g = build_feature_graph(&w, 0.5).unwrap();
        assert!((g.correlation[(0, 1)] - 1.0).abs() < 1e-12);
        // A + I = [[1,1],[1,1]], degrees 2 → every entry 1/2
        for v in g.normalized.as_slice() {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn independent_noise_high_threshold_near_identity() {
        let w = RandomSource::new(3).normal_matrix::<f64>(500, 6, 1.0);
        let g = build_feature_graph(&w, 0.9).unwrap();
        let eye = Matrix::identity(6);
        assert!(g.normalized.sub(&eye).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn constant_column_keeps_self_loop() {
        let w = Matrix::from_fn(8, 3, |t, j| if j == 1 { 2.0 } else { (t * (j + 1)) as f64 });
        let g = build_feature_graph(&w, 0.1).unwrap();
        assert_eq!(g.correlation[(1, 0)], 0.0);
        assert_eq!(g.normalized[(1, 0)], 0.0);
        assert_eq!(g.normalized[(1, 2)], 0.0);
        assert_eq!(g.normalized[(1, 1)], 1.0);
    }

    #[test]
    fn single_node_identity_propagation() {
        let g = FeatureGraph {
            correlation: Matrix::identity(1),
            normalized: Matrix::identity(1),
        };
        let h = Matrix::from_rows(&[[0.5, 2.0, 0.0]]).unwrap();
        assert_eq!(gcn_forward(&g, &h, &Matrix::identity(3)).unwrap(), h);
        let zero = gcn_forward(&g, &h, &Matrix::zeros(3, 2)).unwrap();
        assert!(zero.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn chain_graph_hand_normalization() {
        // path 0 - 1 - 2 with unit weights: degrees with self loops 2, 3, 2
        let rho = Matrix::from_rows(&[[1.0, 1.0, 0.0], [1.0, 1.0, 1.0], [0.0, 1.0, 1.0]]).unwrap();
        let norm = normalize_adjacency(&rho, 0.5);
        let s2 = 1.0 / 2.0;
        let s6 = 1.0 / 6f64.sqrt();
        let expected = Matrix::from_rows(&[[s2, s6, 0.0], [s6, 1.0 / 3.0, s6], [0.0, s6, s2]]).unwrap();
        assert!(norm.sub(&expected).unwrap().max_abs() < 1e-15);
        let g = FeatureGraph {
            correlation: rho,
            normalized: norm,
        };
        let h = Matrix::from_rows(&[[1.0, -1.0], [2.0, 0.5], [0.0, 3.0]]).unwrap();
        let w = Matrix::from_rows(&[[1.0, 0.0, 2.0], [0.5, -1.0, 1.0]]).unwrap();
        let direct = expected.matmul(&h).unwrap().matmul(&w).unwrap().map(|v| v.max(0.0));
        assert!(gcn_forward(&g, &h, &w).unwrap().sub(&direct).unwrap().max_abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn normalized_symmetric_and_finite(seed in 0u64..500, d in 1usize..7, l in 2usize..12, constant in 0usize..8) {
            let mut w = RandomSource::new(seed).normal_matrix::<f64>(l, d, 1.0);
            if constant < d {
                for t in 0..l {
                    w[(t, constant)] = 1.5;
                }
            }
            let g = build_feature_graph(&w, 0.3).unwrap();
            prop_assert!(g.normalized.all_finite());
            for i in 0..d {
                prop_assert!(g.normalized[(i, i)] > 0.0);
                for j in 0..d {
                    prop_assert_eq!(g.normalized[(i, j)], g.normalized[(j, i)]);
                }
            }
        }
    }
}
