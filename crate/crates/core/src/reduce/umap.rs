//! UMAP: fuzzy k-NN graph, `(a, b)` curve fit, and SGD with negative sampling
//! on the fuzzy-set cross-entropy.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::RandomSource;
use crate::Matrix;

use super::neighbors::{exact_knn, squared_distance};
use super::pca::fit_pca;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UmapParams {
    pub n_neighbors: usize,
    pub min_dist: f64,
    pub spread: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub negative_samples: usize,
}

impl Default for UmapParams {
    fn default() -> Self {
        Self {
            n_neighbors: 15,
            min_dist: 0.1,
            spread: 1.0,
            epochs: 200,
            learning_rate: 1.0,
            negative_samples: 5,
        }
    }
}

/// Symmetrized fuzzy membership between two training points.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub head: usize,
    pub tail: usize,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UmapModel {
    pub params: UmapParams,
    pub seed: u64,
    /// Points the graph was built on; queried by out-of-sample transforms.
    pub train_data: Matrix,
    pub embedding: Matrix,
    pub edges: Vec<Edge>,
    pub a: f64,
    pub b: f64,
    /// Cross-entropy estimate at initialization and after every epoch.
    pub loss_trace: Vec<f64>,
}

const GRAD_CLIP: f64 = 4.0;
const SIGMA_ITERS: usize = 64;
const MIN_SCALE: f64 = 1e-3;
const INIT_EXTENT: f64 = 10.0;
const LOSS_SAMPLE: usize = 2000;

/// Per-point `(ρ, σ)` with `Σ_k exp(-max(0, d_k - ρ)/σ) = log₂(k)`.
pub fn smooth_knn_scale(dists: &[f64]) -> (f64, f64) {
    let k = dists.len();
    let rho = dists.iter().copied().find(|&d| d > 0.0).unwrap_or(0.0);
    if k == 0 {
        return (rho, 1.0);
    }
    let target = (k as f64).log2();
    let total = |sigma: f64| -> f64 {
        dists
            .iter()
            .map(|&d| (-(d - rho).max(0.0) / sigma).exp())
            .sum()
    };
    let (mut lo, mut hi, mut mid) = (0.0, f64::INFINITY, 1.0);
    for _ in 0..SIGMA_ITERS {
        let s = total(mid);
        if (s - target).abs() < 1e-5 {
            break;
        }
        if s > target {
            hi = mid;
            mid = (lo + hi) / 2.0;
        } else {
            lo = mid;
            mid = if hi.is_infinite() { mid * 2.0 } else { (lo + hi) / 2.0 };
        }
    }
    let mean_d = dists.iter().sum::<f64>() / k as f64;
    let floor = if rho > 0.0 { MIN_SCALE * mean_d } else { MIN_SCALE * mean_d.max(1e-12) };
    (rho, mid.max(floor))
}

fn membership(d: f64, rho: f64, sigma: f64) -> f64 {
    (-(d - rho).max(0.0) / sigma).exp()
}

/// Least-squares fit of `1/(1 + a d^{2b})` to the `min_dist`-offset
/// exponential, by damped Gauss-Newton.
pub fn fit_ab(spread: f64, min_dist: f64) -> (f64, f64) {
    let xs: Vec<f64> = (0..300).map(|i| 3.0 * spread * i as f64 / 299.0).collect();
    let target: Vec<f64> = xs
        .iter()
        .map(|&x| if x < min_dist { 1.0 } else { (-(x - min_dist) / spread).exp() })
        .collect();
    let sse = |a: f64, b: f64| -> f64 {
        xs.iter()
            .zip(&target)
            .map(|(&x, &t)| {
                let f = 1.0 / (1.0 + a * x.powf(2.0 * b));
                (f - t) * (f - t)
            })
            .sum()
    };
    let (mut a, mut b) = (1.0, 1.0);
    let mut lambda = 1e-3;
    let mut cost = sse(a, b);
    for _ in 0..500 {
        let (mut jtj, mut jtr) = ([[0.0; 2]; 2], [0.0; 2]);
        for (&x, &t) in xs.iter().zip(&target) {
            if x <= 0.0 {
                continue;
            }
            let p = x.powf(2.0 * b);
            let denom = (1.0 + a * p).powi(2);
            let f = 1.0 / (1.0 + a * p);
            let ja = -p / denom;
            let jb = -a * p * 2.0 * x.ln() / denom;
            let r = f - t;
            jtj[0][0] += ja * ja;
            jtj[0][1] += ja * jb;
            jtj[1][1] += jb * jb;
            jtr[0] += ja * r;
            jtr[1] += jb * r;
        }
        jtj[1][0] = jtj[0][1];
        let m00 = jtj[0][0] * (1.0 + lambda);
        let m11 = jtj[1][1] * (1.0 + lambda);
        let det = m00 * m11 - jtj[0][1] * jtj[1][0];
        if det.abs() < 1e-300 {
            break;
        }
        let da = -(m11 * jtr[0] - jtj[0][1] * jtr[1]) / det;
        let db = -(m00 * jtr[1] - jtj[1][0] * jtr[0]) / det;
        let (na, nb) = (a + da, b + db);
        if na > 0.0 && nb > 0.0 {
            let new_cost = sse(na, nb);
            if new_cost < cost {
                let converged = (cost - new_cost) < 1e-15 * cost.max(1e-300);
                a = na;
                b = nb;
                cost = new_cost;
                lambda = (lambda * 0.3).max(1e-12);
                if converged {
                    break;
                }
                continue;
            }
        }
        lambda *= 10.0;
        if lambda > 1e12 {
            break;
        }
    }
    (a, b)
}

/// Fuzzy union of directed memberships: `v_ij = v_{j|i} + v_{i|j} - v_{j|i} v_{i|j}`.
/// Returns both directions of every edge with positive weight.
fn fuzzy_graph(knn: &[Vec<(usize, f64)>]) -> Vec<Edge> {
    use std::collections::BTreeMap;
    let mut directed: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (i, nbrs) in knn.iter().enumerate() {
        let dists: Vec<f64> = nbrs.iter().map(|&(_, d)| d).collect();
        let (rho, sigma) = smooth_knn_scale(&dists);
        for &(j, d) in nbrs {
            directed.insert((i, j), membership(d, rho, sigma));
        }
    }
    let mut sym: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (&(i, j), &w) in &directed {
        let back = directed.get(&(j, i)).copied().unwrap_or(0.0);
        let v = w + back - w * back;
        sym.insert((i, j), v);
        sym.insert((j, i), v);
    }
    sym.into_iter()
        .filter(|&(_, w)| w > 0.0)
        .map(|((head, tail), weight)| Edge { head, tail, weight })
        .collect()
}

/// Top-`m` principal coordinates, each axis scaled into `[-10, 10]`.
fn pca_init(train: &Matrix, m: usize) -> Result<Matrix> {
    let pca = fit_pca(train, m)?;
    let mut y = pca.transform(train)?;
    for j in 0..m {
        let max = (0..y.rows()).map(|i| y[(i, j)].abs()).fold(0.0, f64::max);
        if max > 0.0 {
            for i in 0..y.rows() {
                y[(i, j)] *= INIT_EXTENT / max;
            }
        }
    }
    Ok(y)
}

#[inline]
fn clip(x: f64) -> f64 {
    x.clamp(-GRAD_CLIP, GRAD_CLIP)
}

fn low_dim_similarity(d2: f64, a: f64, b: f64) -> f64 {
    1.0 / (1.0 + a * d2.powf(b))
}

struct LossSample {
    positive: Vec<(usize, usize, f64)>,
    /// Uniform random pairs with their graph membership (usually 0).
    negative: Vec<(usize, usize, f64)>,
}

impl LossSample {
    fn draw(edges: &[Edge], n_points: usize, negatives: usize, rng: &mut RandomSource) -> Self {
        let take = edges.len().min(LOSS_SAMPLE);
        let positive = rng
            .sample_indices(edges.len(), take)
            .into_iter()
            .map(|e| (edges[e].head, edges[e].tail, edges[e].weight))
            .collect();
        let lookup: std::collections::HashMap<(usize, usize), f64> =
            edges.iter().map(|e| ((e.head, e.tail), e.weight)).collect();
        let negative = (0..take * negatives.max(1))
            .map(|_| (rng.index(n_points), rng.index(n_points)))
            .filter(|(i, j)| i != j)
            .map(|(i, j)| (i, j, lookup.get(&(i, j)).copied().unwrap_or(0.0)))
            .collect();
        Self { positive, negative }
    }

    /// Mean cross-entropy over sampled edges plus sampled non-edges.
    fn evaluate(&self, y: &Matrix, a: f64, b: f64) -> f64 {
        let eps = 1e-12;
        let pos: f64 = self
            .positive
            .iter()
            .map(|&(i, j, v)| {
                let q = low_dim_similarity(squared_distance(y.row(i), y.row(j)), a, b).clamp(eps, 1.0 - eps);
                -(v * q.ln() + (1.0 - v) * (1.0 - q).ln())
            })
            .sum();
        let neg: f64 = self
            .negative
            .iter()
            .map(|&(i, j, v)| {
                let q = low_dim_similarity(squared_distance(y.row(i), y.row(j)), a, b).clamp(eps, 1.0 - eps);
                -(v * q.ln() + (1.0 - v) * (1.0 - q).ln())
            })
            .sum();
        (pos + neg) / (self.positive.len() + self.negative.len()).max(1) as f64
    }
}

/// Builds the fuzzy graph on `train` and optimizes an `m`-dimensional layout.
pub fn fit_umap(train: &Matrix, m: usize, params: &UmapParams, seed: u64) -> Result<UmapModel> {
    let t = train.rows();
    if params.n_neighbors < 2 {
        return Err(Error::precondition("UMAP requires n_neighbors >= 2"));
    }
    if t < params.n_neighbors + 1 {
        return Err(Error::InsufficientSamples {
            needed: params.n_neighbors + 1,
            got: t,
        });
    }
    if m == 0 || m >= train.cols() {
        return Err(Error::precondition(format!(
            "UMAP target dimension {m} must lie in 1..{}",
            train.cols()
        )));
    }
    let knn = exact_knn(train, train, params.n_neighbors, true);
    let mut edges = fuzzy_graph(&knn);
    let (a, b) = fit_ab(params.spread, params.min_dist);
    let mut embedding = pca_init(train, m)?;

    let root = RandomSource::new(seed);
    let loss_sample = LossSample::draw(&edges, t, params.negative_samples, &mut root.fork(11));
    let mut loss_trace = vec![loss_sample.evaluate(&embedding, a, b)];

    if params.epochs > 0 {
        let w_max = edges.iter().map(|e| e.weight).fold(0.0, f64::max);
        edges.retain(|e| e.weight >= w_max / params.epochs as f64);
        let mut rng = root.fork(12);
        let eps: Vec<f64> = edges.iter().map(|e| w_max / e.weight).collect();
        let neg_rate = params.negative_samples as f64;
        let eps_neg: Vec<f64> = eps.iter().map(|e| e / neg_rate.max(1e-12)).collect();
        let mut next_sample = eps.clone();
        let mut next_neg = eps_neg.clone();
        let mut grad = vec![0.0; m];

        for epoch in 0..params.epochs {
            let alpha = params.learning_rate * (1.0 - epoch as f64 / params.epochs as f64);
            let now = epoch as f64;
            for (e, edge) in edges.iter().enumerate() {
                if next_sample[e] > now {
                    continue;
                }
                let (i, j) = (edge.head, edge.tail);
                let d2 = squared_distance(embedding.row(i), embedding.row(j));
                let coeff = if d2 > 0.0 {
                    -2.0 * a * b * d2.powf(b - 1.0) / (1.0 + a * d2.powf(b))
                } else {
                    0.0
                };
                for c in 0..m {
                    grad[c] = clip(coeff * (embedding[(i, c)] - embedding[(j, c)])) * alpha;
                }
                for c in 0..m {
                    embedding[(i, c)] += grad[c];
                    embedding[(j, c)] -= grad[c];
                }
                next_sample[e] += eps[e];

                if neg_rate > 0.0 {
                    let n_neg = ((now - next_neg[e]) / eps_neg[e]).floor().max(0.0) as usize;
                    for _ in 0..n_neg {
                        let k = rng.index(t);
                        if k == i {
                            continue;
                        }
                        let d2 = squared_distance(embedding.row(i), embedding.row(k));
                        let coeff = if d2 > 0.0 {
                            2.0 * b / ((0.001 + d2) * (1.0 + a * d2.powf(b)))
                        } else {
                            0.0
                        };
                        for c in 0..m {
                            let g = if coeff > 0.0 {
                                clip(coeff * (embedding[(i, c)] - embedding[(k, c)]))
                            } else {
                                GRAD_CLIP
                            };
                            embedding[(i, c)] += g * alpha;
                        }
                    }
                    next_neg[e] += n_neg as f64 * eps_neg[e];
                }
            }
            loss_trace.push(loss_sample.evaluate(&embedding, a, b));
        }
    }

    Ok(UmapModel {
        params: params.clone(),
        seed,
        train_data: train.clone(),
        embedding,
        edges,
        a,
        b,
        loss_trace,
    })
}

impl UmapModel {
    pub fn input_dim(&self) -> usize {
        self.train_data.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.embedding.cols()
    }

    /// Embeds new points: membership-weighted average of their nearest
    /// training embeddings, refined by `epochs / 4` steps against the fixed
    /// training layout. Rows equal to a training row take its embedding, and
    /// identical rows always receive identical embeddings.
    pub fn transform(&self, data: &Matrix) -> Result<Matrix> {
        if data.cols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                found: data.cols(),
            });
        }
        let m = self.output_dim();
        let k = self.params.n_neighbors;
        let knn = exact_knn(&self.train_data, data, k, false);
        let refine = self.params.epochs / 4;
        let rows: Vec<Vec<f64>> = knn
            .par_iter()
            .map(|nbrs| self.embed_point(nbrs, refine))
            .collect();
        let mut out = Matrix::zeros(data.rows(), m);
        for (i, r) in rows.into_iter().enumerate() {
            out.row_mut(i).copy_from_slice(&r);
        }
        Ok(out)
    }

    fn embed_point(&self, nbrs: &[(usize, f64)], refine: usize) -> Vec<f64> {
        let m = self.output_dim();
        // an exact copy of a training row keeps that row's embedding
        let exact: Vec<usize> = nbrs.iter().filter(|&&(_, d)| d == 0.0).map(|&(j, _)| j).collect();
        if !exact.is_empty() {
            let mut y = vec![0.0; m];
            for &j in &exact {
                for c in 0..m {
                    y[c] += self.embedding[(j, c)] / exact.len() as f64;
                }
            }
            return y;
        }
        let dists: Vec<f64> = nbrs.iter().map(|&(_, d)| d).collect();
        let (rho, sigma) = smooth_knn_scale(&dists);
        let weights: Vec<f64> = dists.iter().map(|&d| membership(d, rho, sigma)).collect();
        let total: f64 = weights.iter().sum();
        let mut y = vec![0.0; m];
        for (&(j, _), &w) in nbrs.iter().zip(&weights) {
            for c in 0..m {
                y[c] += w * self.embedding[(j, c)] / total;
            }
        }
        if refine == 0 {
            return y;
        }
        let (a, b) = (self.a, self.b);
        let w_max = weights.iter().copied().fold(0.0, f64::max);
        let eps: Vec<f64> = weights.iter().map(|&w| if w > 0.0 { w_max / w } else { f64::INFINITY }).collect();
        let mut next = eps.clone();
        let mut rng = RandomSource::new(self.seed).fork(21);
        let t = self.embedding.rows();
        let alpha0 = self.params.learning_rate / 4.0;
        for step in 0..refine {
            let alpha = alpha0 * (1.0 - step as f64 / refine as f64);
            let now = step as f64;
            for (e, &(j, _)) in nbrs.iter().enumerate() {
                if next[e] > now {
                    continue;
                }
                let other = self.embedding.row(j);
                let d2 = squared_distance(&y, other);
                if d2 > 0.0 {
                    let coeff = -2.0 * a * b * d2.powf(b - 1.0) / (1.0 + a * d2.powf(b));
                    for c in 0..m {
                        y[c] += clip(coeff * (y[c] - other[c])) * alpha;
                    }
                }
                next[e] += eps[e];
                for _ in 0..self.params.negative_samples {
                    let k = rng.index(t);
                    let other = self.embedding.row(k);
                    let d2 = squared_distance(&y, other);
                    if d2 > 0.0 {
                        let coeff = 2.0 * b / ((0.001 + d2) * (1.0 + a * d2.powf(b)));
                        for c in 0..m {
                            y[c] += clip(coeff * (y[c] - other[c])) * alpha;
                        }
                    }
                }
            }
        }
        y
    }
}
