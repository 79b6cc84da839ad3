//! Row-major dense layers with hand-written backward passes.

use crate::numerics::{gemm_nn, gemm_nt, gemm_tn};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)

/// `y = x Wᵀ + b` for `x: rows×din`, `W: dout×din`.
pub fn linear(x: &[f64], rows: usize, din: usize, w: &[f64], b: &[f64], dout: usize) -> Vec<f64> {
    let mut y = Vec::with_capacity(rows * dout);
    for _ in 0..rows {
        y.extend_from_slice(b);
    }
    gemm_nt(rows, din, dout, x, w, &mut y);
    y
}

/// Accumulates `dW += dyᵀ x`, `db += Σ_rows dy`, and optionally `dx += dy W`.
#[allow(clippy::too_many_arguments)]
pub fn linear_backward(
    x: &[f64],
    rows: usize,
    din: usize,
    w: &[f64],
    dy: &[f64],
    dout: usize,
    dw: &mut [f64],
    db: &mut [f64],
    dx: Option<&mut [f64]>,
) {
    gemm_tn(rows, dout, din, dy, x, dw);
    for row in dy.chunks_exact(dout) {
        for (a, b) in db.iter_mut().zip(row) {
            *a += b;
        }
    }
    if let Some(dx) = dx {
        gemm_nn(rows, dout, din, dy, w, dx);
    }
}

#[derive(Clone, Debug, Default)]
pub struct LayerNormCache {
    normalized: Vec<f64>,
    inv_std: Vec<f64>,
}

pub fn layer_norm(x: &[f64], rows: usize, dim: usize, gamma: &[f64], beta: &[f64]) -> (Vec<f64>, LayerNormCache) {
    let mut y = vec![0.0; rows * dim];
    let mut normalized = vec![0.0; rows * dim];
    let mut inv_std = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &x[r * dim..(r + 1) * dim];
        let mean = row.iter().sum::<f64>() / dim as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / dim as f64;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        inv_std.push(inv);
        for k in 0..dim {
            let nv = (row[k] - mean) * inv;
            normalized[r * dim + k] = nv;
            y[r * dim + k] = gamma[k] * nv + beta[k];
        }
    }
    (y, LayerNormCache { normalized, inv_std })
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn layer_norm_backward(dy: &[f64], cache: &LayerNormCache, gamma: &[f64], rows: usize, dim: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; rows * dim];
    let mut dgamma = vec![0.0; dim];
    let mut dbeta = vec![0.0; dim];
    let mut dn = vec![0.0; dim];
    for r in 0..rows {
        let g = &dy[r * dim..(r + 1) * dim];
        let nrm = &cache.normalized[r * dim..(r + 1) * dim];
        let (mut sum, mut dot) = (0.0, 0.0);
        for k in 0..dim {
            dgamma[k] += g[k] * nrm[k];
            dbeta[k] += g[k];
            dn[k] = g[k] * gamma[k];
            sum += dn[k];
            dot += dn[k] * nrm[k];
        }
        let scale = cache.inv_std[r] / dim as f64;
        for k in 0..dim {
            dx[r * dim + k] = scale * (dim as f64 * dn[k] - sum - nrm[k] * dot);
        }
    }
    (dx, dgamma, dbeta)
}

/// Tanh approximation of GELU.
#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}
