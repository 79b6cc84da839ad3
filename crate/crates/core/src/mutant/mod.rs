//! MUTANT-style detector: per-window correlation graphs, a GCN embedding of
//! each window, an LSTM producing attention over variables, and a VAE whose
//! attention-weighted reconstruction error is the anomaly score.
//!
//! Windows are consumed in time order. The LSTM state flows across windows
//! and gradients are truncated every `batch_size` windows.

mod graph;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{TimeSeriesDataset, WindowConfig};
use crate::error::{Error, Result};
use crate::nn::{affine, affine_backward, glorot_std, sigmoid, ParamSet, Sgd};
use crate::numerics::{gemm_nn, gemm_nt, gemm_tn, softmax_in_place, RandomSource};
use crate::persist::TensorBundle;
use crate::Matrix;

pub use graph::{build_feature_graph, gcn_forward, FeatureGraph};

/// Fewest input variables the detector accepts.
pub const MIN_DIMS: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MutantConfig {
    pub window: usize,
    pub stride: usize,
    /// Correlation magnitude below which no edge is drawn.
    pub tau: f64,
    pub gcn_layers: usize,
    pub gcn_features: usize,
    pub hidden: usize,
    pub latent: usize,
    pub epochs: usize,
    /// Windows per truncated-BPTT chunk and optimizer step.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for MutantConfig {
    fn default() -> Self {
        Self {
            window: 64,
            stride: 8,
            tau: 0.3,
            gcn_layers: 1,
            gcn_features: 8,
            hidden: 32,
            latent: 8,
            epochs: 10,
            batch_size: 16,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

impl MutantConfig {
    fn check(&self, n_dims: usize) -> Result<()> {
        if n_dims < MIN_DIMS {
            return Err(Error::DimensionTooLow { dims: n_dims });
        }
        if self.window < 4 {
            return Err(Error::precondition(format!(
                "MUTANT window length must be at least 4, got {}",
                self.window
            )));
        }
        WindowConfig::new(self.window, self.stride)?;
        if self.gcn_layers == 0 || self.gcn_features == 0 || self.hidden == 0 || self.latent == 0 {
            return Err(Error::precondition("MUTANT layer sizes must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::precondition("batch_size must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Dims {
    d: usize,
    l: usize,
    g: usize,
    layers: usize,
    hid: usize,
    z: usize,
}

impl Dims {
    fn emb(&self) -> usize {
        self.d * self.g
    }

    fn layer_in(&self, layer: usize) -> usize {
        if layer == 0 {
            self.l
        } else {
            self.g
        }
    }
}

/// Slot indices into the parameter set. Every weight is immediately followed
/// by its bias.
#[derive(Clone, Debug, PartialEq)]
struct Layout {
    gcn: Vec<usize>,
    lstm_w: usize,
    lstm_b: usize,
    att_w: usize,
    att_b: usize,
    enc_w: usize,
    enc_b: usize,
    mu_w: usize,
    mu_b: usize,
    lv_w: usize,
    lv_b: usize,
    dec_w: usize,
    dec_b: usize,
    out_w: usize,
    out_b: usize,
}

fn init_params(dims: Dims, rng: &mut RandomSource) -> (ParamSet, Layout) {
    let mut p = ParamSet::new();
    let Dims { d, l, g, hid, z, .. } = dims;
    let emb = dims.emb();
    let gcn = (0..dims.layers)
        .map(|k| {
            let fan_in = dims.layer_in(k);
            p.push(&format!("gcn.{k}"), &[fan_in, g], (2.0 / fan_in as f64).sqrt(), rng)
        })
        .collect();
    let lstm_w = p.push("lstm.w", &[4 * hid, hid + emb], glorot_std(hid + emb, hid), rng);
    let lstm_b = p.push_filled("lstm.b", &[4 * hid], 0.0);
    // forget gate starts open
    p.get_mut(lstm_b)[..hid].fill(1.0);
    let att_w = p.push("att.w", &[d, hid], 0.1 * glorot_std(hid, d), rng);
    let att_b = p.push_filled("att.b", &[d], 0.0);
    let enc_w = p.push("enc.w", &[2 * z, emb], glorot_std(emb, 2 * z), rng);
    let enc_b = p.push_filled("enc.b", &[2 * z], 0.0);
    let mu_w = p.push("mu.w", &[z, 2 * z], glorot_std(2 * z, z), rng);
    let mu_b = p.push_filled("mu.b", &[z], 0.0);
    let lv_w = p.push("logvar.w", &[z, 2 * z], 0.1 * glorot_std(2 * z, z), rng);
    let lv_b = p.push_filled("logvar.b", &[z], 0.0);
    let dec_w = p.push("dec.w", &[2 * z, z], glorot_std(z, 2 * z), rng);
    let dec_b = p.push_filled("dec.b", &[2 * z], 0.0);
    let out_w = p.push("out.w", &[l * d, 2 * z], glorot_std(2 * z, l * d), rng);
    let out_b = p.push_filled("out.b", &[l * d], 0.0);
    let layout = Layout {
        gcn,
        lstm_w,
        lstm_b,
        att_w,
        att_b,
        enc_w,
        enc_b,
        mu_w,
        mu_b,
        lv_w,
        lv_b,
        dec_w,
        dec_b,
        out_w,
        out_b,
    };
    (p, layout)
}

/// Mutable views of an adjacent weight/bias pair inside a flat gradient.
fn wb_mut<'a>(grad: &'a mut [f64], p: &ParamSet, w: usize, b: usize) -> (&'a mut [f64], &'a mut [f64]) {
    let ws = &p.slots()[w];
    let bs = &p.slots()[b];
    debug_assert_eq!(ws.offset + ws.len(), bs.offset);
    grad[ws.offset..bs.offset + bs.len()].split_at_mut(ws.len())
}

/// Graph-dependent data of one window that does not change during training.
struct PreparedWindow {
    start: usize,
    adj: Vec<f64>,
    /// `Ã_norm · Xᵀ`, the first GCN propagation before its weight.
    ah0: Vec<f64>,
}

fn prepare_windows(series: &Matrix, starts: &[usize], l: usize, tau: f64) -> Vec<PreparedWindow> {
    let d = series.cols();
    starts
        .par_iter()
        .map(|&start| {
            let x = &series.as_slice()[start * d..(start + l) * d];
            let rho = graph::correlation_matrix(x, l, d);
            let adj = graph::normalize_adjacency(&rho, tau).into_vec();
            // Ã·Xᵀ with x stored l×d row-major
            let mut ah0 = vec![0.0; d * l];
            gemm_nt(d, d, l, &adj, x, &mut ah0);
            PreparedWindow { start, adj, ah0 }
        })
        .collect()
}

#[derive(Default)]
struct WindowCache {
    /// Per layer: `Ã·H_l` and the pre-activation `Ã·H_l·W_l`.
    ah: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    xt: Vec<f64>,
    u: Vec<f64>,
    gates: Vec<f64>,
    c_prev: Vec<f64>,
    c: Vec<f64>,
    tc: Vec<f64>,
    h: Vec<f64>,
    alpha: Vec<f64>,
    e: Vec<f64>,
    mu: Vec<f64>,
    lv: Vec<f64>,
    eps: Vec<f64>,
    zs: Vec<f64>,
    q: Vec<f64>,
    xhat: Vec<f64>,
    rec: f64,
    kl: f64,
}

/// Sampled or mean latent for the VAE.
#[derive(Clone, Copy)]
enum Latent<'a> {
    Sample(&'a [f64]),
    Mean,
}

struct Net<'a> {
    dims: Dims,
    p: &'a ParamSet,
    lay: &'a Layout,
}

impl Net<'_> {
    fn embed(&self, w: &PreparedWindow, cache: &mut WindowCache) {
        let Dims { d, g, layers, .. } = self.dims;
        cache.ah.clear();
        cache.pre.clear();
        let mut ah = w.ah0.clone();
        for k in 0..layers {
            let fan_in = self.dims.layer_in(k);
            let mut z = vec![0.0; d * g];
            gemm_nn(d, fan_in, g, &ah, self.p.get(self.lay.gcn[k]), &mut z);
            let h: Vec<f64> = z.iter().map(|v| v.max(0.0)).collect();
            let mut next = Vec::new();
            if k + 1 < layers {
                next = vec![0.0; d * g];
                gemm_nn(d, d, g, &w.adj, &h, &mut next);
            } else {
                cache.xt = h;
            }
            cache.ah.push(std::mem::replace(&mut ah, next));
            cache.pre.push(z);
        }
    }

    fn lstm_step(&self, h_prev: &[f64], c_prev: &[f64], cache: &mut WindowCache) {
        let hid = self.dims.hid;
        cache.u.clear();
        cache.u.extend_from_slice(h_prev);
        cache.u.extend_from_slice(&cache.xt);
        cache.gates.resize(4 * hid, 0.0);
        affine(self.p.get(self.lay.lstm_w), self.p.get(self.lay.lstm_b), &cache.u, &mut cache.gates);
        for (k, v) in cache.gates.iter_mut().enumerate() {
            *v = if k < 3 * hid { sigmoid(*v) } else { v.tanh() };
        }
        let (f, rest) = cache.gates.split_at(hid);
        let (i, rest) = rest.split_at(hid);
        let (o, cand) = rest.split_at(hid);
        cache.c_prev = c_prev.to_vec();
        cache.c = (0..hid).map(|k| f[k] * c_prev[k] + i[k] * cand[k]).collect();
        cache.tc = cache.c.iter().map(|v| v.tanh()).collect();
        cache.h = (0..hid).map(|k| o[k] * cache.tc[k]).collect();
        cache.alpha.resize(self.dims.d, 0.0);
        affine(self.p.get(self.lay.att_w), self.p.get(self.lay.att_b), &cache.h, &mut cache.alpha);
        softmax_in_place(&mut cache.alpha);
    }

    fn vae(&self, x: &[f64], latent: Latent, cache: &mut WindowCache) {
        let Dims { d, l, z, .. } = self.dims;
        let lay = self.lay;
        cache.e.resize(2 * z, 0.0);
        affine(self.p.get(lay.enc_w), self.p.get(lay.enc_b), &cache.xt, &mut cache.e);
        cache.e.iter_mut().for_each(|v| *v = v.tanh());
        cache.mu.resize(z, 0.0);
        cache.lv.resize(z, 0.0);
        affine(self.p.get(lay.mu_w), self.p.get(lay.mu_b), &cache.e, &mut cache.mu);
        affine(self.p.get(lay.lv_w), self.p.get(lay.lv_b), &cache.e, &mut cache.lv);
        cache.eps = match latent {
            Latent::Sample(e) => e.to_vec(),
            Latent::Mean => vec![0.0; z],
        };
        cache.zs = (0..z)
            .map(|k| cache.mu[k] + (0.5 * cache.lv[k]).exp() * cache.eps[k])
            .collect();
        cache.q.resize(2 * z, 0.0);
        affine(self.p.get(lay.dec_w), self.p.get(lay.dec_b), &cache.zs, &mut cache.q);
        cache.q.iter_mut().for_each(|v| *v = v.tanh());
        cache.xhat.resize(l * d, 0.0);
        affine(self.p.get(lay.out_w), self.p.get(lay.out_b), &cache.q, &mut cache.xhat);
        cache.rec = weighted_errors(x, &cache.xhat, &cache.alpha, d).iter().sum::<f64>() / l as f64;
        cache.kl = -0.5
            * (0..z)
                .map(|k| 1.0 + cache.lv[k] - cache.mu[k] * cache.mu[k] - cache.lv[k].exp())
                .sum::<f64>();
    }

    /// Loss and gradient of the mean per-window loss over `windows`, starting
    /// from `(h0, c0)`. Returns the final state.
    fn chunk(
        &self,
        series: &Matrix,
        windows: &[PreparedWindow],
        eps: &[Vec<f64>],
        h0: &[f64],
        c0: &[f64],
        grad: Option<&mut [f64]>,
    ) -> ChunkOutcome {
        let mut caches: Vec<WindowCache> = Vec::with_capacity(windows.len());
        let (mut h, mut c) = (h0.to_vec(), c0.to_vec());
        let (mut rec, mut kl) = (0.0, 0.0);
        for (w, e) in windows.iter().zip(eps) {
            let mut cache = WindowCache::default();
            self.embed(w, &mut cache);
            self.lstm_step(&h, &c, &mut cache);
            self.vae(self.window_data(series, w), Latent::Sample(e), &mut cache);
            rec += cache.rec;
            kl += cache.kl;
            h = cache.h.clone();
            c = cache.c.clone();
            caches.push(cache);
        }
        let n = windows.len() as f64;
        if let Some(grad) = grad {
            self.backward(series, windows, &caches, 1.0 / n, grad);
        }
        ChunkOutcome {
            rec_sum: rec,
            kl_sum: kl,
            h,
            c,
        }
    }

    fn window_data<'s>(&self, series: &'s Matrix, w: &PreparedWindow) -> &'s [f64] {
        let d = self.dims.d;
        &series.as_slice()[w.start * d..(w.start + self.dims.l) * d]
    }

    fn backward(&self, series: &Matrix, windows: &[PreparedWindow], caches: &[WindowCache], scale: f64, grad: &mut [f64]) {
        let Dims { d, l, g, layers, hid, z } = self.dims;
        let p = self.p;
        let lay = self.lay;
        let weight = d as f64 / l as f64;
        let mut dh_next = vec![0.0; hid];
        let mut dc_next = vec![0.0; hid];
        for (w, cache) in windows.iter().zip(caches).rev() {
            let x = self.window_data(series, w);
            // reconstruction term: (1/L) Σ_t Σ_j d·α_j (x - x̂)²
            let mut dxhat = vec![0.0; l * d];
            let mut dalpha = vec![0.0; d];
            for t in 0..l {
                for j in 0..d {
                    let r = x[t * d + j] - cache.xhat[t * d + j];
                    dxhat[t * d + j] = -2.0 * weight * cache.alpha[j] * r * scale;
                    dalpha[j] += weight * r * r * scale;
                }
            }
            let dot: f64 = cache.alpha.iter().zip(&dalpha).map(|(a, b)| a * b).sum();
            let ds: Vec<f64> = (0..d).map(|j| cache.alpha[j] * (dalpha[j] - dot)).collect();
            let mut dh = dh_next.clone();
            {
                let (dw, db) = wb_mut(grad, p, lay.att_w, lay.att_b);
                affine_backward(p.get(lay.att_w), &cache.h, &ds, dw, db, Some(&mut dh));
            }
            let mut dq = vec![0.0; 2 * z];
            {
                let (dw, db) = wb_mut(grad, p, lay.out_w, lay.out_b);
                affine_backward(p.get(lay.out_w), &cache.q, &dxhat, dw, db, Some(&mut dq));
            }
            let dq_pre: Vec<f64> = dq.iter().zip(&cache.q).map(|(a, q)| a * (1.0 - q * q)).collect();
            let mut dzs = vec![0.0; z];
            {
                let (dw, db) = wb_mut(grad, p, lay.dec_w, lay.dec_b);
                affine_backward(p.get(lay.dec_w), &cache.zs, &dq_pre, dw, db, Some(&mut dzs));
            }
            let dmu: Vec<f64> = (0..z).map(|k| dzs[k] + scale * cache.mu[k]).collect();
            let dlv: Vec<f64> = (0..z)
                .map(|k| {
                    let sd = (0.5 * cache.lv[k]).exp();
                    dzs[k] * cache.eps[k] * 0.5 * sd + scale * 0.5 * (cache.lv[k].exp() - 1.0)
                })
                .collect();
            let mut de = vec![0.0; 2 * z];
            {
                let (dw, db) = wb_mut(grad, p, lay.mu_w, lay.mu_b);
                affine_backward(p.get(lay.mu_w), &cache.e, &dmu, dw, db, Some(&mut de));
            }
            {
                let (dw, db) = wb_mut(grad, p, lay.lv_w, lay.lv_b);
                affine_backward(p.get(lay.lv_w), &cache.e, &dlv, dw, db, Some(&mut de));
            }
            let de_pre: Vec<f64> = de.iter().zip(&cache.e).map(|(a, e)| a * (1.0 - e * e)).collect();
            let mut dxt = vec![0.0; d * g];
            {
                let (dw, db) = wb_mut(grad, p, lay.enc_w, lay.enc_b);
                affine_backward(p.get(lay.enc_w), &cache.xt, &de_pre, dw, db, Some(&mut dxt));
            }

            let (f, rest) = cache.gates.split_at(hid);
            let (i, rest) = rest.split_at(hid);
            let (o, cand) = rest.split_at(hid);
            let mut dpre = vec![0.0; 4 * hid];
            for k in 0..hid {
                let dout = dh[k] * cache.tc[k];
                let dc = dh[k] * o[k] * (1.0 - cache.tc[k] * cache.tc[k]) + dc_next[k];
                dpre[k] = dc * cache.c_prev[k] * f[k] * (1.0 - f[k]);
                dpre[hid + k] = dc * cand[k] * i[k] * (1.0 - i[k]);
                dpre[2 * hid + k] = dout * o[k] * (1.0 - o[k]);
                dpre[3 * hid + k] = dc * i[k] * (1.0 - cand[k] * cand[k]);
                dc_next[k] = dc * f[k];
            }
            let mut du = vec![0.0; hid + d * g];
            {
                let (dw, db) = wb_mut(grad, p, lay.lstm_w, lay.lstm_b);
                affine_backward(p.get(lay.lstm_w), &cache.u, &dpre, dw, db, Some(&mut du));
            }
            dh_next.copy_from_slice(&du[..hid]);
            for (a, b) in dxt.iter_mut().zip(&du[hid..]) {
                *a += b;
            }

            let mut dh_layer = dxt;
            for k in (0..layers).rev() {
                let fan_in = self.dims.layer_in(k);
                let dz: Vec<f64> = dh_layer
                    .iter()
                    .zip(&cache.pre[k])
                    .map(|(g, z)| if *z > 0.0 { *g } else { 0.0 })
                    .collect();
                let slot = &p.slots()[lay.gcn[k]];
                gemm_tn(d, fan_in, g, &cache.ah[k], &dz, &mut grad[slot.range()]);
                if k > 0 {
                    let mut tmp = vec![0.0; d * fan_in];
                    gemm_nt(d, g, fan_in, &dz, p.get(lay.gcn[k]), &mut tmp);
                    let mut prev = vec![0.0; d * fan_in];
                    gemm_nn(d, d, fan_in, &w.adj, &tmp, &mut prev);
                    dh_layer = prev;
                }
            }
        }
    }
}

struct ChunkOutcome {
    rec_sum: f64,
    kl_sum: f64,
    h: Vec<f64>,
    c: Vec<f64>,
}

/// Per-timestep `Σ_j d·α_j (x_tj - x̂_tj)²` for an `L×d` window.
fn weighted_errors(x: &[f64], xhat: &[f64], alpha: &[f64], d: usize) -> Vec<f64> {
    x.chunks_exact(d)
        .zip(xhat.chunks_exact(d))
        .map(|(xr, hr)| {
            (0..d)
                .map(|j| d as f64 * alpha[j] * (xr[j] - hr[j]) * (xr[j] - hr[j]))
                .sum()
        })
        .collect()
}

/// Separate terms of the per-window objective.
#[derive(Clone, Debug, PartialEq)]
pub struct ElboTerms {
    pub reconstruction_loss: f64,
    pub kl: f64,
    pub reconstruction: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MutantModel {
    pub config: MutantConfig,
    pub n_dims: usize,
    params: ParamSet,
    layout: Layout,
    /// Mean per-window loss for each epoch.
    pub loss_trace: Vec<f64>,
}

impl MutantModel {
    /// Freshly initialized, untrained model for `n_dims` variables.
    pub fn new(n_dims: usize, config: &MutantConfig) -> Result<Self> {
        config.check(n_dims)?;
        let mut rng = RandomSource::new(config.seed).fork(1);
        let (params, layout) = init_params(Self::dims_for(n_dims, config), &mut rng);
        Ok(Self {
            config: config.clone(),
            n_dims,
            params,
            layout,
            loss_trace: Vec::new(),
        })
    }

    fn dims_for(d: usize, c: &MutantConfig) -> Dims {
        Dims {
            d,
            l: c.window,
            g: c.gcn_features,
            layers: c.gcn_layers,
            hid: c.hidden,
            z: c.latent,
        }
    }

    fn dims(&self) -> Dims {
        Self::dims_for(self.n_dims, &self.config)
    }

    fn net<'a>(&'a self, params: &'a ParamSet) -> Net<'a> {
        Net {
            dims: self.dims(),
            p: params,
            lay: &self.layout,
        }
    }

    pub fn parameters(&self) -> &[f64] {
        &self.params.data
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols < MIN_DIMS {
            return Err(Error::DimensionTooLow { dims: cols });
        }
        if cols != self.n_dims {
            return Err(Error::DimensionMismatch {
                expected: self.n_dims,
                found: cols,
            });
        }
        Ok(())
    }

    /// GCN embedding `x̃` (flattened `d×g`) of one `L×d` window.
    pub fn embed_window(&self, window: &Matrix) -> Result<Vec<f64>> {
        self.check_input(window.cols())?;
        if window.rows() != self.config.window {
            return Err(Error::DimensionMismatch {
                expected: self.config.window,
                found: window.rows(),
            });
        }
        let prepared = prepare_windows(window, &[0], self.config.window, self.config.tau);
        let mut cache = WindowCache::default();
        self.net(&self.params).embed(&prepared[0], &mut cache);
        Ok(cache.xt)
    }

    /// Attention over variables for a sequence of window embeddings, starting
    /// from a zero LSTM state. Each returned vector lies on the simplex.
    pub fn lstm_attention(&self, embeddings: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let net = self.net(&self.params);
        let hid = self.config.hidden;
        let (mut h, mut c) = (vec![0.0; hid], vec![0.0; hid]);
        embeddings
            .iter()
            .map(|x| {
                let mut cache = WindowCache {
                    xt: x.clone(),
                    ..Default::default()
                };
                net.lstm_step(&h, &c, &mut cache);
                h = cache.h;
                c = cache.c;
                cache.alpha
            })
            .collect()
    }

    /// VAE pass for one window: `embedding` is `x̃`, `window` the `L×d` target
    /// and `alpha` the variable weights. Draws one reparameterized sample.
    pub fn vae_elbo(&self, embedding: &[f64], window: &Matrix, alpha: &[f64], rng: &mut RandomSource) -> Result<ElboTerms> {
        let eps: Vec<f64> = (0..self.config.latent).map(|_| rng.normal()).collect();
        self.vae_with_noise(embedding, window, alpha, &eps)
    }

    fn vae_with_noise(&self, embedding: &[f64], window: &Matrix, alpha: &[f64], eps: &[f64]) -> Result<ElboTerms> {
        let dims = self.dims();
        if embedding.len() != dims.emb() {
            return Err(Error::DimensionMismatch {
                expected: dims.emb(),
                found: embedding.len(),
            });
        }
        if window.shape() != (dims.l, dims.d) || alpha.len() != dims.d {
            return Err(Error::DimensionMismatch {
                expected: dims.l * dims.d,
                found: window.rows() * window.cols(),
            });
        }
        let mut cache = WindowCache {
            xt: embedding.to_vec(),
            alpha: alpha.to_vec(),
            ..Default::default()
        };
        self.net(&self.params).vae(window.as_slice(), Latent::Sample(eps), &mut cache);
        if !(cache.rec.is_finite() && cache.kl.is_finite()) {
            return Err(Error::TrainingDiverged("non-finite ELBO".into()));
        }
        Ok(ElboTerms {
            reconstruction_loss: cache.rec,
            kl: cache.kl,
            reconstruction: Matrix::from_vec(dims.l, dims.d, cache.xhat)?,
        })
    }

    /// Mean per-window loss over consecutive windows of `series` starting at
    /// `starts`, with fixed latent noise `eps`, evaluated at `params`.
    /// Returns the loss and its gradient with respect to `params`.
    pub fn objective(&self, params: &[f64], series: &Matrix, starts: &[usize], eps: &[Vec<f64>]) -> Result<(f64, Vec<f64>)> {
        self.check_input(series.cols())?;
        if params.len() != self.params.len() || eps.len() != starts.len() {
            return Err(Error::DimensionMismatch {
                expected: self.params.len(),
                found: params.len(),
            });
        }
        let mut p = self.params.clone();
        p.data.copy_from_slice(params);
        let windows = prepare_windows(series, starts, self.config.window, self.config.tau);
        let hid = self.config.hidden;
        let zero = vec![0.0; hid];
        let mut grad = p.zeros_like();
        let out = self.net(&p).chunk(series, &windows, eps, &zero, &zero, Some(&mut grad));
        Ok(((out.rec_sum + out.kl_sum) / starts.len() as f64, grad))
    }

    /// Per-timestep anomaly score of `series`: attention-weighted
    /// reconstruction error averaged over every window covering the timestep.
    pub fn score(&self, series: &Matrix) -> Result<Vec<f64>> {
        self.check_input(series.cols())?;
        let cfg = WindowConfig::new(self.config.window, self.config.stride)?;
        let starts = cfg.covering_starts(series.rows())?;
        let windows = prepare_windows(series, &starts, self.config.window, self.config.tau);
        let net = self.net(&self.params);
        let hid = self.config.hidden;
        let (mut h, mut c) = (vec![0.0; hid], vec![0.0; hid]);
        let mut sum = vec![0.0; series.rows()];
        let mut count = vec![0usize; series.rows()];
        let d = self.n_dims;
        for w in &windows {
            let mut cache = WindowCache::default();
            net.embed(w, &mut cache);
            net.lstm_step(&h, &c, &mut cache);
            let x = net.window_data(series, w);
            net.vae(x, Latent::Mean, &mut cache);
            for (k, e) in weighted_errors(x, &cache.xhat, &cache.alpha, d).into_iter().enumerate() {
                sum[w.start + k] += e;
                count[w.start + k] += 1;
            }
            h = cache.h;
            c = cache.c;
        }
        let scores: Vec<f64> = sum.iter().zip(&count).map(|(s, &n)| s / n as f64).collect();
        if scores.iter().any(|v| !v.is_finite()) {
            return Err(Error::TrainingDiverged("non-finite anomaly score".into()));
        }
        Ok(scores)
    }

    pub fn to_bundle(&self) -> Result<TensorBundle> {
        let mut b = TensorBundle::new(serde_json::json!({
            "kind": "mutant",
            "config": serde_json::to_value(&self.config)?,
            "n_dims": self.n_dims,
            "loss_trace": self.loss_trace,
        }));
        self.params.write_bundle(&mut b);
        Ok(b)
    }

    pub fn from_bundle(b: &TensorBundle) -> Result<Self> {
        if b.meta["kind"] != "mutant" {
            return Err(Error::Config("bundle does not hold a MUTANT model".into()));
        }
        let config: MutantConfig = serde_json::from_value(b.meta["config"].clone())?;
        let n_dims: usize = serde_json::from_value(b.meta["n_dims"].clone())?;
        let loss_trace: Vec<f64> = serde_json::from_value(b.meta["loss_trace"].clone())?;
        let mut model = Self::new(n_dims, &config)?;
        model.params.read_bundle(b)?;
        model.loss_trace = loss_trace;
        Ok(model)
    }

    /// Writes `mutant.json` and `mutant.bin` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.to_bundle()?.save(dir, "mutant")
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Self::from_bundle(&TensorBundle::load(dir, "mutant")?)
    }
}

/// Trains on the train split of `ds`. Deterministic given `config.seed`.
pub fn train_mutant(ds: &TimeSeriesDataset, config: &MutantConfig) -> Result<MutantModel> {
    let mut model = MutantModel::new(ds.n_dims(), config)?;
    let series = &ds.train;
    let starts = WindowConfig::new(config.window, config.stride)?.starts(series.rows())?;
    let windows = prepare_windows(series, &starts, config.window, config.tau);
    let root = RandomSource::new(config.seed);
    let mut opt = Sgd::new(model.params.len(), config.learning_rate);
    let hid = config.hidden;
    let mut grad = model.params.zeros_like();
    for epoch in 0..config.epochs {
        let mut rng = root.fork(100 + epoch as u64);
        let (mut h, mut c) = (vec![0.0; hid], vec![0.0; hid]);
        let mut total = 0.0;
        for chunk in windows.chunks(config.batch_size) {
            let eps: Vec<Vec<f64>> = chunk
                .iter()
                .map(|_| (0..config.latent).map(|_| rng.normal()).collect())
                .collect();
            grad.fill(0.0);
            let out = model
                .net(&model.params)
                .chunk(series, chunk, &eps, &h, &c, Some(&mut grad));
            let loss = out.rec_sum + out.kl_sum;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::TrainingDiverged(format!("non-finite loss in epoch {}", epoch + 1)));
            }
            total += loss;
            opt.step(&mut model.params.data, &grad);
            h = out.h;
            c = out.c;
        }
        model.loss_trace.push(total / windows.len() as f64);
    }
    if !model.params.all_finite() {
        return Err(Error::TrainingDiverged("non-finite parameters".into()));
    }
    Ok(model)
}

/// Scores the test split of `ds`.
pub fn score_mutant(model: &MutantModel, ds: &TimeSeriesDataset) -> Result<Vec<f64>> {
    model.score(&ds.test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, standardize, SyntheticSpec};
    use crate::numerics::gradient_check;

    fn toy_config() -> MutantConfig {
        MutantConfig {
            window: 4,
            stride: 2,
            gcn_features: 3,
            hidden: 5,
            latent: 2,
            tau: 0.2,
            seed: 11,
            ..Default::default()
        }
    }

    fn toy_series(d: usize, t: usize, seed: u64) -> Matrix {
        let mut rng = RandomSource::new(seed);
        Matrix::from_fn(t, d, |i, j| (0.3 * i as f64 + j as f64).sin() + 0.3 * rng.normal())
    }

    #[test]
    fn rejects_every_dimension_below_eight() {
        for d in 1..=16 {
            let r = MutantModel::new(d, &toy_config());
            if d < MIN_DIMS {
                let err = r.unwrap_err();
                assert!(matches!(err, Error::DimensionTooLow { dims } if dims == d));
                assert!(err.to_string().contains("no fewer than 8 dimensions"));
            } else {
                assert!(r.is_ok(), "d = {d}");
            }
        }
    }

    #[test]
    fn zero_parameters_give_half_gates_and_uniform_attention() {
        let mut m = MutantModel::new(8, &toy_config()).unwrap();
        m.params.data.fill(0.0);
        let alpha = m.lstm_attention(&[vec![0.7; 24]]);
        for a in &alpha[0] {
            assert!((a - 0.125).abs() < 1e-15);
        }
        let net = m.net(&m.params);
        let mut cache = WindowCache {
            xt: vec![0.3; 24],
            ..Default::default()
        };
        net.lstm_step(&[0.0; 5], &[0.0; 5], &mut cache);
        assert!(cache.gates[..15].iter().all(|&g| g == 0.5));
    }

    #[test]
    fn attention_on_simplex() {
        let m = MutantModel::new(9, &toy_config()).unwrap();
        let mut rng = RandomSource::new(4);
        let seq: Vec<Vec<f64>> = (0..6).map(|_| (0..27).map(|_| 2.0 * rng.normal()).collect()).collect();
        for a in m.lstm_attention(&seq) {
            assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(a.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn standard_posterior_has_zero_kl() {
        let mut m = MutantModel::new(8, &toy_config()).unwrap();
        for name in ["mu.w", "mu.b", "logvar.w", "logvar.b"] {
            let idx = m.params.index_of(name).unwrap();
            m.params.get_mut(idx).fill(0.0);
        }
        let window = Matrix::from_fn(4, 8, |t, j| (t + j) as f64 * 0.1);
        let terms = m
            .vae_elbo(&[0.5; 24], &window, &[0.125; 8], &mut RandomSource::new(1))
            .unwrap();
        assert_eq!(terms.kl, 0.0);
        assert!(terms.reconstruction_loss >= 0.0);
    }

    #[test]
    fn one_hot_attention_ignores_other_variables() {
        let m = MutantModel::new(8, &toy_config()).unwrap();
        let mut alpha = vec![0.0; 8];
        alpha[3] = 1.0;
        let window = Matrix::from_fn(4, 8, |t, j| (t * j) as f64 * 0.2);
        let eps = [0.3, -0.4];
        let base = m.vae_with_noise(&[0.2; 24], &window, &alpha, &eps).unwrap();
        let mut perturbed = window.clone();
        for t in 0..4 {
            for j in (0..8).filter(|&j| j != 3) {
                perturbed[(t, j)] += 5.0;
            }
        }
        let other = m.vae_with_noise(&[0.2; 24], &perturbed, &alpha, &eps).unwrap();
        assert_eq!(base.reconstruction_loss, other.reconstruction_loss);
    }

    #[test]
    fn full_gradient_matches_finite_differences() {
        let cfg = MutantConfig {
            gcn_layers: 2,
            ..toy_config()
        };
        let m = MutantModel::new(8, &cfg).unwrap();
        let series = toy_series(8, 12, 2);
        let starts = [0, 2, 4, 6, 8];
        let mut rng = RandomSource::new(9);
        let eps: Vec<Vec<f64>> = starts.iter().map(|_| vec![rng.normal(), rng.normal()]).collect();
        let f = |p: &[f64]| m.objective(p, &series, &starts, &eps).unwrap().0;
        let g = |p: &[f64]| m.objective(p, &series, &starts, &eps).unwrap().1;
        let err = gradient_check(f, g, m.parameters(), 1e-6).unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn training_is_deterministic_and_loss_falls() {
        let spec = SyntheticSpec::balanced(8, 600, 300, 0.1, 1, 3);
        let (ds, _) = standardize(&generate_synthetic(&spec).unwrap());
        let cfg = MutantConfig {
            window: 16,
            stride: 4,
            epochs: 10,
            learning_rate: 5e-3,
            seed: 5,
            ..Default::default()
        };
        let a = train_mutant(&ds, &cfg).unwrap();
        let b = train_mutant(&ds, &cfg).unwrap();
        assert_eq!(a.loss_trace, b.loss_trace);
        assert_eq!(a.parameters(), b.parameters());
        assert!(a.loss_trace[9] < a.loss_trace[0], "{:?}", a.loss_trace);
        let scores = score_mutant(&a, &ds).unwrap();
        assert_eq!(scores.len(), 300);
        assert!(scores.iter().all(|s| s.is_finite() && *s >= 0.0));
    }

    #[test]
    fn save_load_round_trip() {
        let m = MutantModel::new(10, &toy_config()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path()).unwrap();
        let back = MutantModel::load(dir.path()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn score_rejects_wrong_width() {
        let m = MutantModel::new(8, &toy_config()).unwrap();
        assert!(matches!(
            m.score(&toy_series(9, 20, 1)),
            Err(Error::DimensionMismatch { expected: 8, found: 9 })
        ));
        assert!(matches!(m.score(&toy_series(5, 20, 1)), Err(Error::DimensionTooLow { dims: 5 })));
    }
}
