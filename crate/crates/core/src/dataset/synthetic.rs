//! Seeded synthetic benchmark: channels mix a few shared latent sinusoids plus
//! AR(1) noise, and the test split carries labeled injected anomalies.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::RandomSource;
use crate::Matrix;

use super::{DatasetManifest, TimeSeriesDataset};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    /// Impulses on a few channels at every step of the segment.
    PointSpike,
    /// Channels decouple from the shared latent signal.
    CorrelationBreak,
    /// Constant offset on a subset of channels.
    LevelShift,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnomalySpec {
    pub kind: AnomalyKind,
    /// Number of anomalous segments of this kind.
    pub count: usize,
    /// In units of the affected channel's train standard deviation.
    pub magnitude: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    #[serde(default = "default_name")]
    pub name: String,
    pub n_dims: usize,
    pub train_len: usize,
    pub test_len: usize,
    pub seed: u64,
    /// Exact share of labeled test steps; must lie in (0.05, 0.15).
    pub anomaly_fraction: f64,
    pub anomalies: Vec<AnomalySpec>,
    /// Latent sinusoid frequencies in cycles per step.
    #[serde(default = "default_frequencies")]
    pub frequencies: Vec<f64>,
    #[serde(default = "default_ar")]
    pub ar_coefficient: f64,
    #[serde(default = "default_noise")]
    pub noise_scale: f64,
}

fn default_name() -> String {
    "synthetic".into()
}
fn default_frequencies() -> Vec<f64> {
    vec![1.0 / 48.0, 1.0 / 131.0, 1.0 / 307.0]
}
fn default_ar() -> f64 {
    0.6
}
fn default_noise() -> f64 {
    0.1
}

impl SyntheticSpec {
    /// Three anomaly kinds with `per_kind` segments each and default base
    /// process parameters.
    pub fn balanced(n_dims: usize, train_len: usize, test_len: usize, anomaly_fraction: f64, per_kind: usize, seed: u64) -> Self {
        Self {
            name: default_name(),
            n_dims,
            train_len,
            test_len,
            seed,
            anomaly_fraction,
            anomalies: vec![
                AnomalySpec {
                    kind: AnomalyKind::PointSpike,
                    count: per_kind,
                    magnitude: 4.0,
                },
                AnomalySpec {
                    kind: AnomalyKind::CorrelationBreak,
                    count: per_kind,
                    magnitude: 1.0,
                },
                AnomalySpec {
                    kind: AnomalyKind::LevelShift,
                    count: per_kind,
                    magnitude: 3.0,
                },
            ],
            frequencies: default_frequencies(),
            ar_coefficient: default_ar(),
            noise_scale: default_noise(),
        }
    }

    fn segment_count(&self) -> usize {
        self.anomalies.iter().map(|a| a.count).sum()
    }

    fn anomalous_steps(&self) -> usize {
        (self.anomaly_fraction * self.test_len as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_dims == 0 || self.train_len < 2 || self.test_len == 0 {
            return Err(Error::precondition("synthetic spec needs n_dims >= 1, train_len >= 2, test_len >= 1"));
        }
        if !(self.anomaly_fraction > 0.05 && self.anomaly_fraction < 0.15) {
            return Err(Error::precondition(format!(
                "anomaly fraction {} outside (0.05, 0.15)",
                self.anomaly_fraction
            )));
        }
        let segments = self.segment_count();
        if segments == 0 {
            return Err(Error::precondition(
                "no anomaly segments requested; injected fraction would be 0, outside (0.05, 0.15)",
            ));
        }
        let steps = self.anomalous_steps();
        if steps < segments || steps + segments.saturating_sub(1) > self.test_len {
            return Err(Error::precondition(format!(
                "{segments} segments cannot hold {steps} anomalous steps in a test split of {}",
                self.test_len
            )));
        }
        if !(0.0..1.0).contains(&self.ar_coefficient.abs()) || self.frequencies.is_empty() {
            return Err(Error::precondition("AR coefficient must satisfy |phi| < 1 and at least one frequency is required"));
        }
        Ok(())
    }
}

/// Generates the dataset described by `spec`; identical specs give
/// bit-identical output.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<TimeSeriesDataset> {
    spec.validate()?;
    let root = RandomSource::new(spec.seed);
    let d = spec.n_dims;
    let k = spec.frequencies.len();
    let total = spec.train_len + spec.test_len;

    let mut rng = root.fork(1);
    let mixing = Matrix::from_fn(d, k, |_, _| rng.normal());
    let phases: Vec<f64> = (0..k).map(|_| rng.uniform_range(0.0, std::f64::consts::TAU)).collect();
    let offsets: Vec<f64> = (0..d).map(|_| rng.normal() * 0.5).collect();

    let mut noise_rng = root.fork(2);
    let innovation = spec.noise_scale * (1.0 - spec.ar_coefficient.powi(2)).sqrt();
    let mut noise = vec![0.0; d];
    let mut series = Matrix::zeros(total, d);
    for t in 0..total {
        let latent: Vec<f64> = (0..k)
            .map(|c| (std::f64::consts::TAU * spec.frequencies[c] * t as f64 + phases[c]).sin())
            .collect();
        for j in 0..d {
            noise[j] = spec.ar_coefficient * noise[j] + innovation * noise_rng.normal();
            let signal: f64 = (0..k).map(|c| mixing[(j, c)] * latent[c]).sum();
            series[(t, j)] = offsets[j] + signal + noise[j];
        }
    }
    let train = series.slice_rows(0, spec.train_len);
    let mut test = series.slice_rows(spec.train_len, total);
    let train_std: Vec<f64> = (0..d)
        .map(|j| {
            let col = train.column(j);
            crate::numerics::variance(&col).sqrt().max(1e-12)
        })
        .collect();

    let mut place_rng = root.fork(3);
    let segments = place_segments(spec, &mut place_rng);
    let mut kinds: Vec<&AnomalySpec> = spec
        .anomalies
        .iter()
        .flat_map(|a| std::iter::repeat(a).take(a.count))
        .collect();
    place_rng.shuffle(&mut kinds);

    let mut labels = vec![0u8; spec.test_len];
    let mut inject_rng = root.fork(4);
    for (&(start, len), anomaly) in segments.iter().zip(kinds) {
        labels[start..start + len].iter_mut().for_each(|l| *l = 1);
        inject(&mut test, start, len, anomaly, &train_std, &mut inject_rng);
    }

    let positives = labels.iter().filter(|&&l| l == 1).count();
    let manifest = DatasetManifest {
        source: Some(format!("synthetic seed {}", spec.seed)),
        ..DatasetManifest::new(
            spec.name.clone(),
            d,
            spec.train_len,
            spec.test_len,
            positives as f64 / spec.test_len as f64,
        )
    };
    Ok(TimeSeriesDataset {
        manifest,
        train,
        test,
        labels,
    })
}

/// Non-overlapping, non-adjacent `(start, len)` segments whose lengths sum to
/// the requested anomalous step count.
fn place_segments(spec: &SyntheticSpec, rng: &mut RandomSource) -> Vec<(usize, usize)> {
    let s = spec.segment_count();
    let steps = spec.anomalous_steps();
    let lens: Vec<usize> = (0..s).map(|i| steps / s + usize::from(i < steps % s)).collect();
    let free = spec.test_len - steps;
    // Inner gaps get a floor so segments never touch; the rest is spread at random.
    let min_gap = (free / (s + 1)).clamp(1, 64);
    let spare = free - min_gap * (s - 1);
    let mut cuts: Vec<usize> = (0..s).map(|_| rng.index(spare + 1)).collect();
    cuts.sort_unstable();
    let mut out = Vec::with_capacity(s);
    let mut pos = 0;
    let mut prev_cut = 0;
    for (i, (&cut, &len)) in cuts.iter().zip(&lens).enumerate() {
        pos += cut - prev_cut;
        if i > 0 {
            pos += min_gap;
        }
        out.push((pos, len));
        pos += len;
        prev_cut = cut;
    }
    out
}

fn pick_channels(d: usize, share: usize, rng: &mut RandomSource) -> Vec<usize> {
    rng.sample_indices(d, (d / share).max(1))
}

fn inject(test: &mut Matrix, start: usize, len: usize, a: &AnomalySpec, std: &[f64], rng: &mut RandomSource) {
    let d = test.cols();
    match a.kind {
        AnomalyKind::PointSpike => {
            for t in start..start + len {
                for j in pick_channels(d, 8, rng) {
                    let sign = if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
                    test[(t, j)] += sign * a.magnitude * std[j] * rng.uniform_range(0.75, 1.25);
                }
            }
        }
        AnomalyKind::LevelShift => {
            for j in pick_channels(d, 4, rng) {
                let sign = if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
                for t in start..start + len {
                    test[(t, j)] += sign * a.magnitude * std[j];
                }
            }
        }
        AnomalyKind::CorrelationBreak => {
            for j in pick_channels(d, 4, rng) {
                let col: Vec<f64> = (start..start + len).map(|t| test[(t, j)]).collect();
                let level = crate::numerics::mean(&col);
                let freq = rng.uniform_range(1.0 / 20.0, 1.0 / 8.0);
                let phase = rng.uniform_range(0.0, std::f64::consts::TAU);
                for (i, t) in (start..start + len).enumerate() {
                    let wave = (std::f64::consts::TAU * freq * i as f64 + phase).sin();
                    test[(t, j)] = level + a.magnitude * std[j] * std::f64::consts::SQRT_2 * wave;
                }
            }
        }
    }
}
