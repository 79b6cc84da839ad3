//! Anomaly-attention transformer. Each attention layer exposes a learned
//! series association `S` and a Gaussian prior association `P`; their
//! symmetric KL per time position is the association discrepancy, which
//! modulates reconstruction error in the anomaly criterion.
//!
//! Training follows the minimax scheme with stop-gradients: one phase
//! minimizes `rec − λ·AssDis` with `P` held fixed, the other minimizes
//! `rec + λ·AssDis` with `S` held fixed. Their gradients are summed into one
//! update per batch.

mod layers;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{TimeSeriesDataset, WindowConfig};
use crate::error::{Error, Result};
use crate::nn::{glorot_std, sigmoid, ParamSet, Sgd};
use crate::numerics::{gemm_nn, gemm_nt, gemm_tn, softmax_in_place, RandomSource};
use crate::persist::TensorBundle;
use crate::Matrix;

use layers::{gelu, gelu_grad, layer_norm, layer_norm_backward, linear, linear_backward, softplus, LayerNormCache};

/// Additive smoothing applied to association rows before the KL terms.
pub const SMOOTHING: f64 = 1e-8;
const SIGMA_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformerConfig {
    /// Window length `N`.
    pub window: usize,
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    /// Discrepancy weight `λ`.
    pub lambda: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Offset between training windows; defaults to the window length.
    pub train_stride: Option<usize>,
    /// Ratio handed to the ratio-percentile threshold policy.
    pub anomaly_ratio: f64,
    pub seed: u64,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self {
            window: 100,
            layers: 3,
            heads: 4,
            d_model: 64,
            d_ff: 128,
            lambda: 3.0,
            epochs: 10,
            batch_size: 16,
            learning_rate: 1e-3,
            train_stride: None,
            anomaly_ratio: 0.01,
            seed: 0,
        }
    }
}

impl TransformerConfig {
    fn check(&self) -> Result<()> {
        if self.window < 2 || self.layers == 0 || self.heads == 0 || self.d_ff == 0 {
            return Err(Error::precondition("transformer sizes must be positive and window >= 2"));
        }
        if self.d_model == 0 || self.d_model % self.heads != 0 {
            return Err(Error::precondition(format!(
                "d_model {} must be a positive multiple of heads {}",
                self.d_model, self.heads
            )));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::precondition("lambda must be positive"));
        }
        if !(self.anomaly_ratio > 0.0 && self.anomaly_ratio <= 0.5) {
            return Err(Error::precondition("anomaly_ratio must lie in (0, 0.5]"));
        }
        if self.batch_size == 0 {
            return Err(Error::precondition("batch_size must be positive"));
        }
        WindowConfig::new(self.window, self.train_stride())?;
        Ok(())
    }

    pub fn train_stride(&self) -> usize {
        self.train_stride.unwrap_or(self.window)
    }
}

/// `P_ij ∝ exp(−(i−j)² / 2σ_i²)`, rows normalized.
pub fn prior_association(n: usize, sigma: &[f64]) -> Matrix {
    let mut p = Matrix::zeros(n, n);
    for i in 0..n {
        fill_prior_row(i, sigma[i], p.row_mut(i));
    }
    p
}

fn fill_prior_row(i: usize, sigma: f64, row: &mut [f64]) {
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut sum = 0.0;
    for (j, v) in row.iter_mut().enumerate() {
        let dist = i as f64 - j as f64;
        *v = (-dist * dist * inv).exp();
        sum += *v;
    }
    // the diagonal term is 1, so sum >= 1
    for v in row.iter_mut() {
        *v /= sum;
    }
}

fn smooth(v: f64, n: usize, eps: f64) -> f64 {
    (v + eps) / (1.0 + n as f64 * eps)
}

fn sym_kl_row(p: &[f64], s: &[f64], eps: f64) -> f64 {
    let n = p.len();
    p.iter()
        .zip(s)
        .map(|(&a, &b)| {
            let (a, b) = (smooth(a, n, eps), smooth(b, n, eps));
            (a - b) * (a.ln() - b.ln())
        })
        .sum()
}

/// Per-position association discrepancy from per-layer, per-head `P` and `S`
/// (`[layer][head]`, each `N×N`): heads are averaged within a layer, the
/// symmetric KL is taken row by row, and layers are averaged.
///
/// With `smoothing = None`, mismatched supports raise `InfiniteDivergence`.
pub fn association_discrepancy(p_layers: &[Vec<Matrix>], s_layers: &[Vec<Matrix>], smoothing: Option<f64>) -> Result<Vec<f64>> {
    if p_layers.is_empty() || p_layers.len() != s_layers.len() {
        return Err(Error::DimensionMismatch {
            expected: p_layers.len(),
            found: s_layers.len(),
        });
    }
    let n = p_layers[0][0].rows();
    let mut out = vec![0.0; n];
    for (ps, ss) in p_layers.iter().zip(s_layers) {
        let p = head_mean(ps)?;
        let s = head_mean(ss)?;
        if p.shape() != (n, n) || s.shape() != (n, n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: p.rows().max(s.rows()),
            });
        }
        for i in 0..n {
            let r = match smoothing {
                Some(eps) => sym_kl_row(p.row(i), s.row(i), eps),
                None => {
                    for j in 0..n {
                        if (p[(i, j)] > 0.0) != (s[(i, j)] > 0.0) {
                            return Err(Error::InfiniteDivergence { row: i, col: j });
                        }
                    }
                    sym_kl_row(p.row(i), s.row(i), 0.0)
                }
            };
            out[i] += r / p_layers.len() as f64;
        }
    }
    Ok(out)
}

fn head_mean(heads: &[Matrix]) -> Result<Matrix> {
    let first = heads.first().ok_or(Error::EmptyInput)?;
    let mut acc = Matrix::zeros(first.rows(), first.cols());
    for h in heads {
        acc.axpy(1.0 / heads.len() as f64, h);
    }
    Ok(acc)
}

/// `softmax(−assdis) ⊙ mean_k (X_ik − X̂_ik)²` over the window positions.
pub fn criterion(assdis: &[f64], x: &Matrix, xhat: &Matrix) -> Result<Vec<f64>> {
    if x.shape() != xhat.shape() {
        return Err(Error::DimensionMismatch {
            expected: x.rows() * x.cols(),
            found: xhat.rows() * xhat.cols(),
        });
    }
    if assdis.len() != x.rows() {
        return Err(Error::DimensionMismatch {
            expected: x.rows(),
            found: assdis.len(),
        });
    }
    let recon = position_errors(x.as_slice(), xhat.as_slice(), x.cols());
    Ok(combine(assdis, &recon))
}

fn position_errors(x: &[f64], xhat: &[f64], m: usize) -> Vec<f64> {
    x.chunks_exact(m)
        .zip(xhat.chunks_exact(m))
        .map(|(a, b)| a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>() / m as f64)
        .collect()
}

fn combine(assdis: &[f64], recon: &[f64]) -> Vec<f64> {
    let mut cad: Vec<f64> = assdis.iter().map(|v| -v).collect();
    softmax_in_place(&mut cad);
    cad.iter().zip(recon).map(|(c, r)| c * r).collect()
}

#[derive(Clone, Copy, Debug)]
struct Dims {
    m: usize,
    n: usize,
    dm: usize,
    heads: usize,
    layers: usize,
    dff: usize,
}

impl Dims {
    fn hd(&self) -> usize {
        self.dm / self.heads
    }
}

#[derive(Clone, Debug, PartialEq)]
struct LayerSlots {
    q_w: usize,
    q_b: usize,
    k_w: usize,
    k_b: usize,
    v_w: usize,
    v_b: usize,
    o_w: usize,
    o_b: usize,
    sig_w: usize,
    sig_b: usize,
    ln1_g: usize,
    ln1_b: usize,
    f1_w: usize,
    f1_b: usize,
    f2_w: usize,
    f2_b: usize,
    ln2_g: usize,
    ln2_b: usize,
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    in_w: usize,
    in_b: usize,
    layers: Vec<LayerSlots>,
    out_w: usize,
    out_b: usize,
}

fn init_params(dims: Dims, rng: &mut RandomSource) -> (ParamSet, Layout) {
    let Dims { m, dm, heads, dff, .. } = dims;
    let mut p = ParamSet::new();
    let in_w = p.push("embed.w", &[dm, m], glorot_std(m, dm), rng);
    let in_b = p.push_filled("embed.b", &[dm], 0.0);
    let layers = (0..dims.layers)
        .map(|l| {
            let name = |s: &str| format!("layer{l}.{s}");
            let sq = glorot_std(dm, dm);
            LayerSlots {
                q_w: p.push(&name("q.w"), &[dm, dm], sq, rng),
                q_b: p.push_filled(&name("q.b"), &[dm], 0.0),
                k_w: p.push(&name("k.w"), &[dm, dm], sq, rng),
                k_b: p.push_filled(&name("k.b"), &[dm], 0.0),
                v_w: p.push(&name("v.w"), &[dm, dm], sq, rng),
                v_b: p.push_filled(&name("v.b"), &[dm], 0.0),
                o_w: p.push(&name("o.w"), &[dm, dm], sq, rng),
                o_b: p.push_filled(&name("o.b"), &[dm], 0.0),
                sig_w: p.push(&name("sigma.w"), &[heads, dm], 0.1 * glorot_std(dm, heads), rng),
                // softplus(1.5) + floor ≈ 1.7 positions of prior bandwidth
                sig_b: p.push_filled(&name("sigma.b"), &[heads], 1.5),
                ln1_g: p.push_filled(&name("ln1.g"), &[dm], 1.0),
                ln1_b: p.push_filled(&name("ln1.b"), &[dm], 0.0),
                f1_w: p.push(&name("ff1.w"), &[dff, dm], glorot_std(dm, dff), rng),
                f1_b: p.push_filled(&name("ff1.b"), &[dff], 0.0),
                f2_w: p.push(&name("ff2.w"), &[dm, dff], glorot_std(dff, dm), rng),
                f2_b: p.push_filled(&name("ff2.b"), &[dm], 0.0),
                ln2_g: p.push_filled(&name("ln2.g"), &[dm], 1.0),
                ln2_b: p.push_filled(&name("ln2.b"), &[dm], 0.0),
            }
        })
        .collect();
    let out_w = p.push("head.w", &[m, dm], glorot_std(dm, m), rng);
    let out_b = p.push_filled("head.b", &[m], 0.0);
    (
        p,
        Layout {
            in_w,
            in_b,
            layers,
            out_w,
            out_b,
        },
    )
}

fn positional_encoding(n: usize, dm: usize) -> Vec<f64> {
    let mut pe = vec![0.0; n * dm];
    for pos in 0..n {
        for i in 0..dm {
            let exponent = (2 * (i / 2)) as f64 / dm as f64;
            let angle = pos as f64 / 10000f64.powf(exponent);
            pe[pos * dm + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}

struct LayerCache {
    input: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Per head `N×N` series association.
    s: Vec<Vec<f64>>,
    attn: Vec<f64>,
    sig_pre: Vec<f64>,
    sigma: Vec<f64>,
    /// Per head `N×N` prior association.
    p: Vec<Vec<f64>>,
    ln1: LayerNormCache,
    y1: Vec<f64>,
    f1: Vec<f64>,
    act: Vec<f64>,
    ln2: LayerNormCache,
}

/// Weights of the reconstruction and discrepancy terms in a backward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Coefficients {
    pub reconstruction: f64,
    /// Multiplies `∂AssDis/∂S`.
    pub series: f64,
    /// Multiplies `∂AssDis/∂P`.
    pub prior: f64,
}

impl Coefficients {
    /// Both minimax phases summed: `(rec − λ·AD|P fixed) + (rec + λ·AD|S fixed)`.
    pub fn minimax(lambda: f64) -> Self {
        Self {
            reconstruction: 2.0,
            series: -lambda,
            prior: lambda,
        }
    }

    /// `rec − λ·AD` with the prior held fixed.
    pub fn minimize_phase(lambda: f64) -> Self {
        Self {
            reconstruction: 1.0,
            series: -lambda,
            prior: 0.0,
        }
    }

    /// `rec + λ·AD` with the series association held fixed.
    pub fn maximize_phase(lambda: f64) -> Self {
        Self {
            reconstruction: 1.0,
            series: 0.0,
            prior: lambda,
        }
    }
}

/// Result of one window's forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowOutput {
    pub reconstruction: Matrix,
    /// Mean squared residual over the whole window.
    pub reconstruction_loss: f64,
    /// Per-position discrepancy, averaged over layers.
    pub assdis: Vec<f64>,
    /// Head-averaged prior per layer, row-major `N×N`.
    pub prior_mean: Vec<Vec<f64>>,
}

struct Net<'a> {
    dims: Dims,
    p: &'a ParamSet,
    lay: &'a Layout,
    pe: &'a [f64],
}

impl Net<'_> {
    fn forward(&self, x: &[f64], frozen_prior: Option<&[Vec<f64>]>) -> (WindowOutput, Vec<LayerCache>, Vec<f64>) {
        let Dims { m, n, dm, heads, dff, .. } = self.dims;
        let hd = self.dims.hd();
        let p = self.p;
        let mut h = linear(x, n, m, p.get(self.lay.in_w), p.get(self.lay.in_b), dm);
        for (v, pe) in h.iter_mut().zip(self.pe) {
            *v += pe;
        }
        let mut caches = Vec::with_capacity(self.dims.layers);
        let scale = 1.0 / (hd as f64).sqrt();
        for ls in &self.lay.layers {
            let q = linear(&h, n, dm, p.get(ls.q_w), p.get(ls.q_b), dm);
            let k = linear(&h, n, dm, p.get(ls.k_w), p.get(ls.k_b), dm);
            let v = linear(&h, n, dm, p.get(ls.v_w), p.get(ls.v_b), dm);
            let mut attn = vec![0.0; n * dm];
            let mut s_heads = Vec::with_capacity(heads);
            for head in 0..heads {
                let qh = head_cols(&q, n, dm, head, hd);
                let kh = head_cols(&k, n, dm, head, hd);
                let vh = head_cols(&v, n, dm, head, hd);
                let mut s = vec![0.0; n * n];
                gemm_nt(n, hd, n, &qh, &kh, &mut s);
                for row in s.chunks_exact_mut(n) {
                    row.iter_mut().for_each(|v| *v *= scale);
                    softmax_in_place(row);
                }
                let mut ah = vec![0.0; n * hd];
                gemm_nn(n, n, hd, &s, &vh, &mut ah);
                put_head_cols(&mut attn, &ah, n, dm, head, hd);
                s_heads.push(s);
            }
            let o = linear(&attn, n, dm, p.get(ls.o_w), p.get(ls.o_b), dm);
            let sig_pre = linear(&h, n, dm, p.get(ls.sig_w), p.get(ls.sig_b), heads);
            let sigma: Vec<f64> = sig_pre.iter().map(|&s| softplus(s) + SIGMA_FLOOR).collect();
            let p_heads: Vec<Vec<f64>> = (0..heads)
                .map(|head| {
                    let mut pm = vec![0.0; n * n];
                    for i in 0..n {
                        fill_prior_row(i, sigma[i * heads + head], &mut pm[i * n..(i + 1) * n]);
                    }
                    pm
                })
                .collect();
            let r1: Vec<f64> = h.iter().zip(&o).map(|(a, b)| a + b).collect();
            let (y1, ln1) = layer_norm(&r1, n, dm, p.get(ls.ln1_g), p.get(ls.ln1_b));
            let f1 = linear(&y1, n, dm, p.get(ls.f1_w), p.get(ls.f1_b), dff);
            let act: Vec<f64> = f1.iter().map(|&v| gelu(v)).collect();
            let f2 = linear(&act, n, dff, p.get(ls.f2_w), p.get(ls.f2_b), dm);
            let r2: Vec<f64> = y1.iter().zip(&f2).map(|(a, b)| a + b).collect();
            let (out, ln2) = layer_norm(&r2, n, dm, p.get(ls.ln2_g), p.get(ls.ln2_b));
            caches.push(LayerCache {
                input: std::mem::replace(&mut h, out),
                q,
                k,
                v,
                s: s_heads,
                attn,
                sig_pre,
                sigma,
                p: p_heads,
                ln1,
                y1,
                f1,
                act,
                ln2,
            });
        }
        let xhat = linear(&h, n, dm, p.get(self.lay.out_w), p.get(self.lay.out_b), m);
        let rec = x.iter().zip(&xhat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / (n * m) as f64;

        let mut assdis = vec![0.0; n];
        let mut prior_mean = Vec::with_capacity(caches.len());
        for (l, c) in caches.iter().enumerate() {
            let pbar = match frozen_prior {
                Some(f) => f[l].clone(),
                None => mean_heads(&c.p),
            };
            let sbar = mean_heads(&c.s);
            for i in 0..n {
                assdis[i] += sym_kl_row(&pbar[i * n..(i + 1) * n], &sbar[i * n..(i + 1) * n], SMOOTHING)
                    / caches.len() as f64;
            }
            prior_mean.push(pbar);
        }
        let out = WindowOutput {
            reconstruction: Matrix::from_vec(n, m, xhat.clone()).expect("window shape"),
            reconstruction_loss: rec,
            assdis,
            prior_mean,
        };
        (out, caches, h)
    }

    /// Accumulates `scale · ∂(c_r·rec + AD terms)/∂θ` into `grad`.
    fn backward(&self, x: &[f64], out: &WindowOutput, caches: &[LayerCache], last: &[f64], coeffs: Coefficients, scale: f64, grad: &mut [f64]) {
        let Dims { m, n, dm, heads, dff, layers } = self.dims;
        let hd = self.dims.hd();
        let p = self.p;
        let lay = self.lay;
        let xhat = out.reconstruction.as_slice();
        let dxhat: Vec<f64> = x
            .iter()
            .zip(xhat)
            .map(|(a, b)| scale * coeffs.reconstruction * 2.0 * (b - a) / (n * m) as f64)
            .collect();
        let mut dh = vec![0.0; n * dm];
        {
            let (dw, db) = wb_mut(grad, p, lay.out_w, lay.out_b);
            linear_backward(last, n, dm, p.get(lay.out_w), &dxhat, m, dw, db, Some(&mut dh));
        }
        let ad_scale = scale / (layers * n) as f64;
        let norm = 1.0 + n as f64 * SMOOTHING;
        let att_scale = 1.0 / (hd as f64).sqrt();

        for (l, (ls, c)) in lay.layers.iter().zip(caches).enumerate().rev() {
            // discrepancy gradients with respect to the head-averaged P and S
            let pbar = &out.prior_mean[l];
            let sbar = mean_heads(&c.s);
            let mut dpbar = vec![0.0; n * n];
            let mut dsbar = vec![0.0; n * n];
            if coeffs.prior != 0.0 || coeffs.series != 0.0 {
                for idx in 0..n * n {
                    let a = smooth(pbar[idx], n, SMOOTHING);
                    let b = smooth(sbar[idx], n, SMOOTHING);
                    let log_ratio = a.ln() - b.ln();
                    dpbar[idx] = coeffs.prior * ad_scale * (log_ratio + 1.0 - b / a) / norm;
                    dsbar[idx] = coeffs.series * ad_scale * (-log_ratio + 1.0 - a / b) / norm;
                }
            }

            let (dr2, dg2, db2) = {
                let g = p.get(ls.ln2_g);
                layer_norm_backward(&dh, &c.ln2, g, n, dm)
            };
            add_into(grad, p, ls.ln2_g, &dg2);
            add_into(grad, p, ls.ln2_b, &db2);
            let mut dy1 = dr2.clone();
            let mut dact = vec![0.0; n * dff];
            {
                let (dw, db) = wb_mut(grad, p, ls.f2_w, ls.f2_b);
                linear_backward(&c.act, n, dff, p.get(ls.f2_w), &dr2, dm, dw, db, Some(&mut dact));
            }
            let df1: Vec<f64> = dact.iter().zip(&c.f1).map(|(g, &v)| g * gelu_grad(v)).collect();
            {
                let (dw, db) = wb_mut(grad, p, ls.f1_w, ls.f1_b);
                linear_backward(&c.y1, n, dm, p.get(ls.f1_w), &df1, dff, dw, db, Some(&mut dy1));
            }
            let (dr1, dg1, db1) = layer_norm_backward(&dy1, &c.ln1, p.get(ls.ln1_g), n, dm);
            add_into(grad, p, ls.ln1_g, &dg1);
            add_into(grad, p, ls.ln1_b, &db1);

            let mut dinput = dr1.clone();
            let mut dattn = vec![0.0; n * dm];
            {
                let (dw, db) = wb_mut(grad, p, ls.o_w, ls.o_b);
                linear_backward(&c.attn, n, dm, p.get(ls.o_w), &dr1, dm, dw, db, Some(&mut dattn));
            }
            let mut dq = vec![0.0; n * dm];
            let mut dk = vec![0.0; n * dm];
            let mut dv = vec![0.0; n * dm];
            let mut dsigma = vec![0.0; n * heads];
            for head in 0..heads {
                let dah = head_cols(&dattn, n, dm, head, hd);
                let vh = head_cols(&c.v, n, dm, head, hd);
                let qh = head_cols(&c.q, n, dm, head, hd);
                let kh = head_cols(&c.k, n, dm, head, hd);
                let s = &c.s[head];
                let mut ds = vec![0.0; n * n];
                gemm_nt(n, hd, n, &dah, &vh, &mut ds);
                for (a, b) in ds.iter_mut().zip(&dsbar) {
                    *a += b / heads as f64;
                }
                let mut dvh = vec![0.0; n * hd];
                gemm_tn(n, n, hd, s, &dah, &mut dvh);
                let mut dscores = vec![0.0; n * n];
                for i in 0..n {
                    let srow = &s[i * n..(i + 1) * n];
                    let drow = &ds[i * n..(i + 1) * n];
                    let dot: f64 = srow.iter().zip(drow).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        dscores[i * n + j] = srow[j] * (drow[j] - dot) * att_scale;
                    }
                }
                let mut dqh = vec![0.0; n * hd];
                gemm_nn(n, n, hd, &dscores, &kh, &mut dqh);
                let mut dkh = vec![0.0; n * hd];
                gemm_tn(n, n, hd, &dscores, &qh, &mut dkh);
                put_head_cols(&mut dq, &dqh, n, dm, head, hd);
                put_head_cols(&mut dk, &dkh, n, dm, head, hd);
                put_head_cols(&mut dv, &dvh, n, dm, head, hd);

                if coeffs.prior != 0.0 {
                    let ph = &c.p[head];
                    for i in 0..n {
                        let prow = &ph[i * n..(i + 1) * n];
                        let drow = &dpbar[i * n..(i + 1) * n];
                        let dot: f64 = prow.iter().zip(drow).map(|(a, b)| a * b / heads as f64).sum();
                        let sig = c.sigma[i * heads + head];
                        let mut acc = 0.0;
                        for j in 0..n {
                            let dist = i as f64 - j as f64;
                            acc += prow[j] * (drow[j] / heads as f64 - dot) * dist * dist;
                        }
                        dsigma[i * heads + head] = acc / (sig * sig * sig);
                    }
                }
            }
            if coeffs.prior != 0.0 {
                let dsig_pre: Vec<f64> = dsigma.iter().zip(&c.sig_pre).map(|(g, &s)| g * sigmoid(s)).collect();
                let (dw, db) = wb_mut(grad, p, ls.sig_w, ls.sig_b);
                linear_backward(&c.input, n, dm, p.get(ls.sig_w), &dsig_pre, heads, dw, db, Some(&mut dinput));
            }
            for (w, b, dy) in [(ls.q_w, ls.q_b, &dq), (ls.k_w, ls.k_b, &dk), (ls.v_w, ls.v_b, &dv)] {
                let (dw, db) = wb_mut(grad, p, w, b);
                linear_backward(&c.input, n, dm, p.get(w), dy, dm, dw, db, Some(&mut dinput));
            }
            dh = dinput;
        }
        let (dw, db) = wb_mut(grad, p, lay.in_w, lay.in_b);
        linear_backward(x, n, m, p.get(lay.in_w), &dh, dm, dw, db, None);
    }
}

fn mean_heads(heads: &[Vec<f64>]) -> Vec<f64> {
    let mut acc = vec![0.0; heads[0].len()];
    for h in heads {
        for (a, v) in acc.iter_mut().zip(h) {
            *a += v / heads.len() as f64;
        }
    }
    acc
}

fn head_cols(x: &[f64], n: usize, dm: usize, head: usize, hd: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * hd);
    for row in x.chunks_exact(dm).take(n) {
        out.extend_from_slice(&row[head * hd..(head + 1) * hd]);
    }
    out
}

fn put_head_cols(x: &mut [f64], part: &[f64], n: usize, dm: usize, head: usize, hd: usize) {
    for i in 0..n {
        x[i * dm + head * hd..i * dm + (head + 1) * hd].copy_from_slice(&part[i * hd..(i + 1) * hd]);
    }
}

fn wb_mut<'a>(grad: &'a mut [f64], p: &ParamSet, w: usize, b: usize) -> (&'a mut [f64], &'a mut [f64]) {
    let ws = &p.slots()[w];
    let bs = &p.slots()[b];
    debug_assert_eq!(ws.offset + ws.len(), bs.offset);
    grad[ws.offset..bs.offset + bs.len()].split_at_mut(ws.len())
}

fn add_into(grad: &mut [f64], p: &ParamSet, slot: usize, values: &[f64]) {
    for (g, v) in grad[p.slots()[slot].range()].iter_mut().zip(values) {
        *g += v;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransformerModel {
    pub config: TransformerConfig,
    pub n_dims: usize,
    params: ParamSet,
    layout: Layout,
    pe: Vec<f64>,
    /// Epoch-mean reconstruction loss.
    pub loss_trace: Vec<f64>,
    /// Epoch-mean association discrepancy.
    pub assdis_trace: Vec<f64>,
}

impl TransformerModel {
    pub fn new(n_dims: usize, config: &TransformerConfig) -> Result<Self> {
        config.check()?;
        if n_dims == 0 {
            return Err(Error::EmptyInput);
        }
        let dims = Self::dims_for(n_dims, config);
        let (params, layout) = init_params(dims, &mut RandomSource::new(config.seed).fork(1));
        Ok(Self {
            config: config.clone(),
            n_dims,
            params,
            layout,
            pe: positional_encoding(config.window, config.d_model),
            loss_trace: Vec::new(),
            assdis_trace: Vec::new(),
        })
    }

    fn dims_for(m: usize, c: &TransformerConfig) -> Dims {
        Dims {
            m,
            n: c.window,
            dm: c.d_model,
            heads: c.heads,
            layers: c.layers,
            dff: c.d_ff,
        }
    }

    fn net<'a>(&'a self, params: &'a ParamSet) -> Net<'a> {
        Net {
            dims: Self::dims_for(self.n_dims, &self.config),
            p: params,
            lay: &self.layout,
            pe: &self.pe,
        }
    }

    pub fn parameters(&self) -> &[f64] {
        &self.params.data
    }

    pub fn parameters_mut(&mut self) -> &mut [f64] {
        &mut self.params.data
    }

    fn check_window(&self, window: &Matrix) -> Result<()> {
        if window.cols() != self.n_dims {
            return Err(Error::DimensionMismatch {
                expected: self.n_dims,
                found: window.cols(),
            });
        }
        if window.rows() != self.config.window {
            return Err(Error::DimensionMismatch {
                expected: self.config.window,
                found: window.rows(),
            });
        }
        Ok(())
    }

    /// Forward pass over one `N×m` window.
    pub fn forward(&self, window: &Matrix) -> Result<WindowOutput> {
        self.check_window(window)?;
        Ok(self.net(&self.params).forward(window.as_slice(), None).0)
    }

    /// Per-layer, per-head prior and series associations of one window.
    pub fn associations(&self, window: &Matrix) -> Result<(Vec<Vec<Matrix>>, Vec<Vec<Matrix>>)> {
        self.check_window(window)?;
        let n = self.config.window;
        let (_, caches, _) = self.net(&self.params).forward(window.as_slice(), None);
        let to_m = |v: &Vec<f64>| Matrix::from_vec(n, n, v.clone()).expect("square");
        Ok(caches
            .iter()
            .map(|c| (c.p.iter().map(to_m).collect(), c.s.iter().map(to_m).collect()))
            .unzip())
    }

    /// Value and gradient at `params` of the mean over `windows` of
    /// `c_r·rec + c·AD`. Without `frozen_prior` the two discrepancy
    /// coefficients must agree (`c`); with it, the prior means are replaced
    /// by those constants (one entry per window), `c = coeffs.series` and
    /// `coeffs.prior` must be zero.
    pub fn objective(&self, params: &[f64], windows: &[Matrix], coeffs: Coefficients, frozen_prior: Option<&[Vec<Vec<f64>>]>) -> Result<(f64, Vec<f64>)> {
        if params.len() != self.params.len() {
            return Err(Error::DimensionMismatch {
                expected: self.params.len(),
                found: params.len(),
            });
        }
        let ad_weight = match frozen_prior {
            Some(_) if coeffs.prior != 0.0 => {
                return Err(Error::precondition("a frozen prior carries no gradient"));
            }
            Some(_) => coeffs.series,
            None if coeffs.series == coeffs.prior => coeffs.series,
            None => {
                return Err(Error::precondition(
                    "unequal discrepancy coefficients have no single objective; freeze the prior",
                ));
            }
        };
        let mut p = self.params.clone();
        p.data.copy_from_slice(params);
        let net = self.net(&p);
        let mut grad = p.zeros_like();
        let mut value = 0.0;
        let scale = 1.0 / windows.len() as f64;
        for (w_idx, w) in windows.iter().enumerate() {
            self.check_window(w)?;
            let frozen = frozen_prior.map(|f| f[w_idx].as_slice());
            let (out, caches, last) = net.forward(w.as_slice(), frozen);
            let ad = out.assdis.iter().sum::<f64>() / out.assdis.len() as f64;
            value += scale * (coeffs.reconstruction * out.reconstruction_loss + ad_weight * ad);
            net.backward(w.as_slice(), &out, &caches, &last, coeffs, scale, &mut grad);
        }
        Ok((value, grad))
    }

    /// Per-position criterion for one window.
    pub fn window_criterion(&self, window: &Matrix) -> Result<Vec<f64>> {
        let out = self.forward(window)?;
        criterion(&out.assdis, window, &out.reconstruction)
    }

    /// Scores a whole series with non-overlapping windows. A trailing partial
    /// window is left-padded by repeating its first row; padded positions
    /// are discarded.
    pub fn score(&self, series: &Matrix) -> Result<Vec<f64>> {
        if series.cols() != self.n_dims {
            return Err(Error::DimensionMismatch {
                expected: self.n_dims,
                found: series.cols(),
            });
        }
        let n = self.config.window;
        let t = series.rows();
        if t == 0 {
            return Err(Error::EmptyInput);
        }
        let full = t / n;
        let mut jobs: Vec<(Matrix, usize)> = (0..full).map(|k| (series.slice_rows(k * n, (k + 1) * n), 0)).collect();
        let rem = t - full * n;
        if rem > 0 {
            let tail = series.slice_rows(t - rem, t);
            let pad = n - rem;
            let window = Matrix::from_fn(n, self.n_dims, |i, j| if i < pad { tail[(0, j)] } else { tail[(i - pad, j)] });
            jobs.push((window, pad));
        }
        let parts: Vec<Result<Vec<f64>>> = jobs
            .par_iter()
            .map(|(w, pad)| Ok(self.window_criterion(w)?[*pad..].to_vec()))
            .collect();
        let mut scores = Vec::with_capacity(t);
        for p in parts {
            scores.extend(p?);
        }
        if scores.iter().any(|v| !v.is_finite()) {
            return Err(Error::TrainingDiverged("non-finite anomaly score".into()));
        }
        Ok(scores)
    }

    pub fn to_bundle(&self) -> Result<TensorBundle> {
        let mut b = TensorBundle::new(serde_json::json!({
            "kind": "transformer",
            "config": serde_json::to_value(&self.config)?,
            "n_dims": self.n_dims,
            "loss_trace": self.loss_trace,
            "assdis_trace": self.assdis_trace,
        }));
        self.params.write_bundle(&mut b);
        Ok(b)
    }

    pub fn from_bundle(b: &TensorBundle) -> Result<Self> {
        if b.meta["kind"] != "transformer" {
            return Err(Error::Config("bundle does not hold a transformer model".into()));
        }
        let config: TransformerConfig = serde_json::from_value(b.meta["config"].clone())?;
        let n_dims: usize = serde_json::from_value(b.meta["n_dims"].clone())?;
        let mut model = Self::new(n_dims, &config)?;
        model.params.read_bundle(b)?;
        model.loss_trace = serde_json::from_value(b.meta["loss_trace"].clone())?;
        model.assdis_trace = serde_json::from_value(b.meta["assdis_trace"].clone())?;
        Ok(model)
    }

    /// Writes `transformer.json` and `transformer.bin` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.to_bundle()?.save(dir, "transformer")
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Self::from_bundle(&TensorBundle::load(dir, "transformer")?)
    }
}

/// Minimax training on the train split. Deterministic given `config.seed`.
pub fn train_minimax(ds: &TimeSeriesDataset, config: &TransformerConfig) -> Result<TransformerModel> {
    let mut model = TransformerModel::new(ds.n_dims(), config)?;
    let series = &ds.train;
    let n = config.window;
    let m = ds.n_dims();
    let starts = WindowConfig::new(n, config.train_stride())?.starts(series.rows())?;
    let root = RandomSource::new(config.seed);
    let mut opt = Sgd::new(model.params.len(), config.learning_rate);
    let coeffs = Coefficients::minimax(config.lambda);
    for epoch in 0..config.epochs {
        let mut order = starts.clone();
        root.fork(100 + epoch as u64).shuffle(&mut order);
        let (mut rec_total, mut ad_total) = (0.0, 0.0);
        for batch in order.chunks(config.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            let net = model.net(&model.params);
            let results: Vec<(Vec<f64>, f64, f64)> = batch
                .par_iter()
                .map(|&s| {
                    let x = &series.as_slice()[s * m..(s + n) * m];
                    let (out, caches, last) = net.forward(x, None);
                    let mut g = vec![0.0; model.params.len()];
                    net.backward(x, &out, &caches, &last, coeffs, scale, &mut g);
                    let ad = out.assdis.iter().sum::<f64>() / n as f64;
                    (g, out.reconstruction_loss, ad)
                })
                .collect();
            let mut grad = model.params.zeros_like();
            for (g, rec, ad) in &results {
                for (a, b) in grad.iter_mut().zip(g) {
                    *a += b;
                }
                rec_total += rec;
                ad_total += ad;
            }
            if !rec_total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::TrainingDiverged(format!("non-finite loss in epoch {}", epoch + 1)));
            }
            opt.step(&mut model.params.data, &grad);
        }
        model.loss_trace.push(rec_total / starts.len() as f64);
        model.assdis_trace.push(ad_total / starts.len() as f64);
    }
    if !model.params.all_finite() {
        return Err(Error::TrainingDiverged("non-finite parameters".into()));
    }
    Ok(model)
}

/// Scores the test split of `ds`.
pub fn score_series(model: &TransformerModel, ds: &TimeSeriesDataset) -> Result<Vec<f64>> {
    model.score(&ds.test)
}

#[cfg(test)]
mod tests;
