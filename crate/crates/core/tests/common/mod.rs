//! Independent oracles and fixtures shared by the integration tests and the
//! acceptance harness. Nothing here calls the library routine it checks.

#![allow(dead_code)]

use drtsad::eval::Counts;
use drtsad::{Matrix, RandomSource};

/// Sample covariance by explicitly summing outer products.
pub fn summed_covariance(data: &Matrix) -> Vec<Vec<f64>> {
    let (rows, n) = data.shape();
    let mut mean = vec![0.0; n];
    for i in 0..rows {
        for j in 0..n {
            mean[j] += data[(i, j)];
        }
    }
    for v in &mut mean {
        *v /= rows as f64;
    }
    let mut cov = vec![vec![0.0; n]; n];
    for i in 0..rows {
        for a in 0..n {
            for b in 0..n {
                cov[a][b] += (data[(i, a)] - mean[a]) * (data[(i, b)] - mean[b]);
            }
        }
    }
    for row in &mut cov {
        for v in row.iter_mut() {
            *v /= (rows - 1) as f64;
        }
    }
    cov
}

fn mat_vec(a: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    a.iter().map(|row| row.iter().zip(v).map(|(x, y)| x * y).sum()).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Top-`k` eigenpairs by power iteration with Hotelling deflation. Only
/// meant for small matrices with a well separated spectrum.
pub fn power_eigenpairs(a: &[Vec<f64>], k: usize) -> Vec<(f64, Vec<f64>)> {
    let n = a.len();
    let mut work = a.to_vec();
    let mut out = Vec::new();
    for p in 0..k {
        let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * ((i * 7 + p * 3) % 5) as f64).collect();
        let mut lambda = 0.0;
        for _ in 0..20_000 {
            let w = mat_vec(&work, &v);
            let len = norm(&w);
            if len == 0.0 {
                break;
            }
            let next: Vec<f64> = w.iter().map(|x| x / len).collect();
            let delta = next.iter().zip(&v).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            v = next;
            lambda = dot(&v, &mat_vec(&work, &v));
            if delta < 1e-15 {
                break;
            }
        }
        for i in 0..n {
            for j in 0..n {
                work[i][j] -= lambda * v[i] * v[j];
            }
        }
        out.push((lambda, v));
    }
    out
}

/// Draws a symmetric `n × n` matrix with standard normal entries.
pub fn random_symmetric(n: usize, rng: &mut RandomSource) -> Matrix {
    let mut a = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = rng.normal();
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    a
}

/// Rows drawn from a Gaussian with per-axis scales, then rotated by a fixed
/// random orthogonal matrix (Gram–Schmidt on a normal draw).
pub fn anisotropic_gaussian(rows: usize, scales: &[f64], seed: u64) -> Matrix {
    let n = scales.len();
    let mut rng = RandomSource::new(seed);
    let mut basis: Vec<Vec<f64>> = Vec::new();
    while basis.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        for b in &basis {
            let d = dot(&v, b);
            for (x, y) in v.iter_mut().zip(b) {
                *x -= d * y;
            }
        }
        let len = norm(&v);
        basis.push(v.into_iter().map(|x| x / len).collect());
    }
    let mut out = Matrix::zeros(rows, n);
    for i in 0..rows {
        let z: Vec<f64> = scales.iter().map(|s| s * rng.normal()).collect();
        for j in 0..n {
            out[(i, j)] = 3.0 + (0..n).map(|k| z[k] * basis[k][j]).sum::<f64>();
        }
    }
    out
}

/// Two Gaussian blobs with unit spread, centers 8 apart on every axis.
pub fn blobs(per_blob: usize, dims: usize, seed: u64) -> (Matrix, Vec<usize>) {
    let mut rng = RandomSource::new(seed);
    let mut data = Matrix::zeros(2 * per_blob, dims);
    let mut label = Vec::with_capacity(2 * per_blob);
    for i in 0..2 * per_blob {
        let blob = i / per_blob;
        for j in 0..dims {
            data[(i, j)] = 8.0 * blob as f64 + rng.normal();
        }
        label.push(blob);
    }
    (data, label)
}

pub fn centroid(y: &Matrix, label: &[usize], which: usize) -> Vec<f64> {
    let mut c = vec![0.0; y.cols()];
    let mut count = 0;
    for i in 0..y.rows() {
        if label[i] == which {
            for (cj, v) in c.iter_mut().zip(y.row(i)) {
                *cj += v;
            }
            count += 1;
        }
    }
    c.iter().map(|v| v / count as f64).collect()
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Centroid separation and mean intra-blob pairwise distance.
pub fn blob_separation(y: &Matrix, label: &[usize]) -> (f64, f64) {
    let sep = distance(&centroid(y, label, 0), &centroid(y, label, 1));
    let (mut intra, mut pairs) = (0.0, 0usize);
    for i in 0..y.rows() {
        for j in (i + 1)..y.rows() {
            if label[i] == label[j] {
                intra += distance(y.row(i), y.row(j));
                pairs += 1;
            }
        }
    }
    (sep, intra / pairs as f64)
}

/// Shannon entropy (nats) of a probability row.
pub fn entropy_nats(p: &[f64]) -> f64 {
    p.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum()
}

/// Per-index tally.
pub fn tally(pred: &[u8], labels: &[u8]) -> Counts {
    let mut c = Counts::default();
    for i in 0..pred.len() {
        let (p, l) = (pred[i] == 1, labels[i] == 1);
        if p && l {
            c.tp += 1;
        } else if p {
            c.fp += 1;
        } else if l {
            c.fn_ += 1;
        } else {
            c.tn += 1;
        }
    }
    c
}

/// Point adjustment by scanning each labeled run.
pub fn adjust_by_runs(pred: &[u8], labels: &[u8]) -> Vec<u8> {
    let mut out = pred.to_vec();
    let mut i = 0;
    while i < labels.len() {
        if labels[i] == 1 {
            let mut j = i;
            while j < labels.len() && labels[j] == 1 {
                j += 1;
            }
            if pred[i..j].contains(&1) {
                for v in &mut out[i..j] {
                    *v = 1;
                }
            }
            i = j;
        } else {
            i += 1;
        }
    }
    out
}

pub fn f1(c: &Counts) -> f64 {
    let p = if c.tp + c.fp == 0 { 0.0 } else { c.tp as f64 / (c.tp + c.fp) as f64 };
    let r = if c.tp + c.fn_ == 0 { 0.0 } else { c.tp as f64 / (c.tp + c.fn_) as f64 };
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Best `score ≥ t` threshold among `candidates` (ascending), scanning each
/// one with explicit prediction, adjustment and tally. Ties keep the lower
/// threshold.
pub fn brute_best(scores: &[f64], labels: &[u8], candidates: &[f64], adjust: bool) -> (f64, Counts) {
    let mut best: Option<(f64, Counts, f64)> = None;
    for &t in candidates {
        let pred: Vec<u8> = scores.iter().map(|&s| u8::from(s >= t)).collect();
        let pred = if adjust { adjust_by_runs(&pred, labels) } else { pred };
        let c = tally(&pred, labels);
        let f = f1(&c);
        if best.as_ref().is_none_or(|b| f > b.2) {
            best = Some((t, c, f));
        }
    }
    let (t, c, _) = best.expect("at least one candidate");
    (t, c)
}

/// The sweep grid written out independently: `lo + span·10^(−6(1−k/(G−1)))`
/// with the last point pinned to the maximum.
pub fn sweep_grid(scores: &[f64], grid_size: usize) -> Vec<f64> {
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return vec![hi];
    }
    let g = grid_size - 1;
    let mut out: Vec<f64> = (0..=g)
        .map(|k| if k == g { hi } else { lo + (hi - lo) * 10f64.powf(-6.0 * (1.0 - k as f64 / g as f64)) })
        .collect();
    out.dedup();
    out
}

pub fn distinct_sorted(scores: &[f64]) -> Vec<f64> {
    let mut v = scores.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Random labels built from runs, and scores with ties.
pub fn random_instance(rng: &mut RandomSource, len: usize) -> (Vec<f64>, Vec<u8>) {
    let mut labels = vec![0u8; len];
    let mut i = 0;
    while i < len {
        let run = 1 + rng.index(12);
        let on = rng.uniform() < 0.25;
        for v in labels.iter_mut().skip(i).take(run) {
            *v = u8::from(on);
        }
        i += run;
    }
    let scores = labels
        .iter()
        .map(|&l| {
            let base = if rng.uniform() < 0.3 { rng.index(10) as f64 } else { rng.normal() };
            base + if l == 1 { rng.uniform() * 1.5 } else { 0.0 }
        })
        .collect();
    (scores, labels)
}

/// Worst-case deviations of a fitted PCA from the brute-force oracle.
#[derive(Clone, Copy, Debug, Default)]
pub struct PcaCheck {
    /// `max |CᵀC − I|`.
    pub orthonormality: f64,
    /// Projected train variance per component vs its eigenvalue, relative.
    pub variance: f64,
    /// Library eigenvalues vs power iteration on the summed covariance, relative.
    pub spectrum: f64,
    /// `1 − |cos|` between library and oracle components.
    pub direction: f64,
}

pub fn check_pca(data: &Matrix, m: usize) -> PcaCheck {
    let model = drtsad::reduce::fit_pca(data, m).unwrap();
    let c = &model.components;
    let mut out = PcaCheck::default();
    for a in 0..m {
        for b in 0..m {
            let g = dot(&c.column(a), &c.column(b));
            let want = if a == b { 1.0 } else { 0.0 };
            out.orthonormality = out.orthonormality.max((g - want).abs());
        }
    }
    let y = model.transform(data).unwrap();
    let rows = y.rows();
    for k in 0..m {
        let col = y.column(k);
        let mu = col.iter().sum::<f64>() / rows as f64;
        let var = col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / (rows - 1) as f64;
        let lambda = model.eigenvalues[k];
        out.variance = out.variance.max((var - lambda).abs() / lambda.abs().max(1e-300));
    }
    let cov = summed_covariance(data);
    for (k, (lambda, v)) in power_eigenpairs(&cov, m).into_iter().enumerate() {
        out.spectrum = out.spectrum.max((model.eigenvalues[k] - lambda).abs() / lambda.abs().max(1e-300));
        out.direction = out.direction.max(1.0 - dot(&c.column(k), &v).abs());
    }
    out
}

/// The four PCA fixtures: a 4×3 table whose covariance is summed by hand to
/// diag(8/3, 2/3, 0), plus three rotated anisotropic Gaussians.
pub fn pca_fixtures() -> Vec<(&'static str, Matrix, usize)> {
    let toy = Matrix::from_rows(&[[2.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-2.0, 0.0, 0.0], [0.0, -1.0, 0.0]]).unwrap();
    vec![
        ("toy 4x3", toy, 2),
        ("gaussian 200x5", anisotropic_gaussian(200, &[5.0, 3.0, 2.0, 1.0, 0.5], 1), 3),
        ("gaussian 300x8", anisotropic_gaussian(300, &[9.0, 6.0, 4.0, 2.5, 1.5, 1.0, 0.6, 0.3], 2), 4),
        ("gaussian 120x4", anisotropic_gaussian(120, &[2.0, 1.0, 0.4, 0.1], 3), 4),
    ]
}

/// Mean of `‖xR‖² / ‖x‖²` over `draws` seeded projection matrices.
pub fn rp_mean_norm_ratio(n: usize, m: usize, draws: usize) -> f64 {
    let mut xs = RandomSource::new(100);
    let x = Matrix::from_fn(1, n, |_, _| xs.normal());
    let x2 = dot(x.row(0), x.row(0));
    let total: f64 = (0..draws)
        .map(|s| {
            let mut rng = RandomSource::new(s as u64);
            let rp = drtsad::reduce::fit_random_projection::<f64>(n, m, &mut rng).unwrap();
            let y = rp.transform(&x).unwrap();
            dot(y.row(0), y.row(0)) / x2
        })
        .sum();
    total / draws as f64
}

/// Share of pairwise squared distances distorted by less than `eps`.
pub fn jl_share(points: usize, n: usize, m: usize, eps: f64, seed: u64) -> f64 {
    let mut rng = RandomSource::new(seed);
    let x: Matrix = rng.normal_matrix(points, n, 1.0);
    let rp = drtsad::reduce::fit_random_projection::<f64>(n, m, &mut rng).unwrap();
    let y = rp.transform(&x).unwrap();
    let (mut ok, mut pairs) = (0, 0);
    for i in 0..points {
        for j in (i + 1)..points {
            let d0 = distance(x.row(i), x.row(j)).powi(2);
            let d1 = distance(y.row(i), y.row(j)).powi(2);
            if ((d1 - d0) / d0).abs() < eps {
                ok += 1;
            }
            pairs += 1;
        }
    }
    ok as f64 / pairs as f64
}

/// Largest `|H(p_i) − ln(perplexity)|` over the rows of the conditional
/// matrix for points spaced one unit apart on a line and on a square grid.
pub fn tsne_entropy_gap(perplexity: f64) -> f64 {
    let line = Matrix::from_fn(80, 1, |i, _| i as f64);
    let grid = Matrix::from_fn(81, 2, |i, j| if j == 0 { (i / 9) as f64 } else { (i % 9) as f64 });
    let mut worst: f64 = 0.0;
    for data in [line, grid] {
        let p = drtsad::reduce::conditional_affinities(&data, perplexity);
        for i in 0..p.rows() {
            let sum: f64 = p.row(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12, "row {i} sums to {sum}");
            worst = worst.max((entropy_nats(p.row(i)) - perplexity.ln()).abs());
        }
    }
    worst
}

/// Share of post-exaggeration iterations whose KL does not exceed the
/// previous one, for a three-cluster dataset.
pub fn tsne_non_increasing_share() -> (f64, Vec<f64>) {
    let mut rng = RandomSource::new(21);
    let data = Matrix::from_fn(150, 10, |i, _| 6.0 * (i % 3) as f64 + rng.normal());
    let train = data.slice_rows(0, 120);
    let test = data.slice_rows(120, 150);
    let params = drtsad::reduce::TsneParams {
        perplexity: 20.0,
        iterations: 600,
        ..Default::default()
    };
    let model = drtsad::reduce::fit_tsne_joint(&train, &test, 2, &params).unwrap();
    let trace = model.kl_trace;
    let start = params.exaggeration_iters;
    let steps = trace.len() - start - 1;
    let ok = (start + 1..trace.len()).filter(|&i| trace[i] <= trace[i - 1]).count();
    (ok as f64 / steps as f64, trace)
}

#[derive(Clone, Debug)]
pub struct UmapCheck {
    pub separation: f64,
    pub intra: f64,
    pub loss_first: f64,
    pub loss_last: f64,
    /// Worst `‖transform(x_i) − y_i‖` relative to the embedding's mean
    /// distance from its centroid.
    pub self_transform: f64,
    /// Share of fresh blob points embedded nearer their own centroid.
    pub test_own_centroid: f64,
    pub duplicates_identical: bool,
}

pub fn check_umap() -> UmapCheck {
    use drtsad::reduce::{fit_umap, UmapParams};
    let (train, label) = blobs(30, 10, 7);
    let model = fit_umap(&train, 2, &UmapParams::default(), 9).unwrap();
    let y = &model.embedding;
    let (separation, intra) = blob_separation(y, &label);

    let all: Vec<usize> = vec![0; y.rows()];
    let center = centroid(y, &all, 0);
    let scale = (0..y.rows()).map(|i| distance(y.row(i), &center)).sum::<f64>() / y.rows() as f64;
    let back = model.transform(&train).unwrap();
    let self_transform = (0..y.rows())
        .map(|i| distance(back.row(i), y.row(i)) / scale)
        .fold(0.0, f64::max);

    let (fresh, fresh_label) = blobs(50, 10, 99);
    let z = model.transform(&fresh).unwrap();
    let c = [centroid(y, &label, 0), centroid(y, &label, 1)];
    let own = (0..z.rows())
        .filter(|&i| {
            let l = fresh_label[i];
            distance(z.row(i), &c[l]) < distance(z.row(i), &c[1 - l])
        })
        .count();

    let dup = Matrix::from_rows(&[fresh.row(3), fresh.row(3), fresh.row(60)]).unwrap();
    let zd = model.transform(&dup).unwrap();
    UmapCheck {
        separation,
        intra,
        loss_first: model.loss_trace[0],
        loss_last: *model.loss_trace.last().unwrap(),
        self_transform,
        test_own_centroid: own as f64 / z.rows() as f64,
        duplicates_identical: zd.row(0) == zd.row(1),
    }
}

/// Eigendecomposition errors relative to `‖A‖_F`: worst `‖Av − λv‖`,
/// `max |VᵀV − I|`, `max |VΛVᵀ − A|` and `|Σλ − tr A|`.
pub fn eigen_errors(a: &Matrix) -> (f64, f64, f64, f64) {
    let eig = drtsad::numerics::symmetric_eigendecomposition(a).unwrap();
    let n = a.rows();
    let v = &eig.eigenvectors;
    let scale = a.frobenius_norm().max(1e-300);
    let mut resid: f64 = 0.0;
    for k in 0..n {
        let col = v.column(k);
        let av = a.matvec(&col).unwrap();
        let r = av
            .iter()
            .zip(&col)
            .map(|(x, y)| (x - eig.eigenvalues[k] * y).powi(2))
            .sum::<f64>()
            .sqrt();
        resid = resid.max(r / scale);
    }
    let vtv = v.t_matmul(v).unwrap();
    let mut ortho: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            ortho = ortho.max((vtv[(i, j)] - if i == j { 1.0 } else { 0.0 }).abs());
        }
    }
    let recon = v.matmul(&Matrix::diag(&eig.eigenvalues)).unwrap().matmul_t(v).unwrap();
    let rec = recon.sub(a).unwrap().max_abs() / scale;
    let trace = (eig.eigenvalues.iter().sum::<f64>() - a.trace()).abs() / scale;
    (resid, ortho, rec, trace)
}

/// A smooth multichannel series with a little noise.
pub fn wavy_series(t: usize, d: usize, seed: u64) -> Matrix {
    let mut rng = RandomSource::new(seed);
    Matrix::from_fn(t, d, |i, j| (0.4 * i as f64 + 0.7 * j as f64).sin() + 0.2 * rng.normal())
}

/// Full-model MUTANT gradient check at d = 8, L = 4.
pub fn mutant_gradient_error() -> f64 {
    use drtsad::mutant::{MutantConfig, MutantModel};
    let cfg = MutantConfig {
        window: 4,
        stride: 2,
        gcn_features: 3,
        hidden: 5,
        latent: 3,
        seed: 4,
        ..Default::default()
    };
    let model = MutantModel::new(8, &cfg).unwrap();
    let x = wavy_series(14, 8, 1);
    let starts = [0, 2, 4, 6, 8, 10];
    let mut rng = RandomSource::new(2);
    let eps: Vec<Vec<f64>> = starts.iter().map(|_| (0..3).map(|_| rng.normal()).collect()).collect();
    let f = |p: &[f64]| model.objective(p, &x, &starts, &eps).unwrap().0;
    let g = |p: &[f64]| model.objective(p, &x, &starts, &eps).unwrap().1;
    drtsad::numerics::gradient_check(f, g, model.parameters(), 1e-6).unwrap()
}

/// Transformer gradient checks at N = 8 with one layer: every parameter with
/// the discrepancy differentiated through both associations, then the
/// minimize phase against a frozen prior.
pub fn transformer_gradient_errors() -> (f64, f64) {
    use drtsad::transformer::{Coefficients, TransformerConfig, TransformerModel};
    let cfg = TransformerConfig {
        window: 8,
        layers: 1,
        heads: 2,
        d_model: 8,
        d_ff: 12,
        seed: 6,
        ..Default::default()
    };
    let model = TransformerModel::new(4, &cfg).unwrap();
    let windows = vec![wavy_series(8, 4, 3), wavy_series(8, 4, 4)];
    let both = Coefficients {
        reconstruction: 1.0,
        series: 3.0,
        prior: 3.0,
    };
    let f = |p: &[f64]| model.objective(p, &windows, both, None).unwrap().0;
    let g = |p: &[f64]| model.objective(p, &windows, both, None).unwrap().1;
    let full = drtsad::numerics::gradient_check(f, g, model.parameters(), 1e-6).unwrap();

    let frozen: Vec<Vec<Vec<f64>>> = windows.iter().map(|w| model.forward(w).unwrap().prior_mean).collect();
    let coeffs = Coefficients::minimize_phase(3.0);
    let f = |p: &[f64]| model.objective(p, &windows, coeffs, Some(&frozen)).unwrap().0;
    let g = |p: &[f64]| model.objective(p, &windows, coeffs, Some(&frozen)).unwrap().1;
    let phase = drtsad::numerics::gradient_check(f, g, model.parameters(), 1e-6).unwrap();
    (full, phase)
}
