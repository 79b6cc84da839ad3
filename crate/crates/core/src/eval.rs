//! Thresholding, point adjustment and precision/recall/F1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::quantile;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ThresholdPolicy {
    /// Flag scores strictly above the `(1 − ratio)`-quantile.
    RatioPercentile { ratio: f64 },
    /// Best F1 over a geometric grid of thresholds in `(min, max]`.
    BestF1Sweep { grid_size: usize },
    /// Best F1 over every distinct score used as a threshold.
    BestF1Exhaustive,
}

impl ThresholdPolicy {
    /// True when the threshold was chosen using the labels.
    pub fn oracle_informed(&self) -> bool {
        !matches!(self, ThresholdPolicy::RatioPercentile { .. })
    }

    pub fn describe(&self) -> String {
        match self {
            ThresholdPolicy::RatioPercentile { ratio } => format!("ratio-percentile r={ratio}"),
            ThresholdPolicy::BestF1Sweep { grid_size } => format!("best-F1 sweep ({grid_size} thresholds)"),
            ThresholdPolicy::BestF1Exhaustive => "best-F1 over all distinct scores".into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ThresholdPolicy::RatioPercentile { ratio } if !(ratio > 0.0 && ratio <= 0.5) => {
                Err(Error::precondition(format!("ratio {ratio} outside (0, 0.5]")))
            }
            ThresholdPolicy::BestF1Sweep { grid_size } if grid_size < 10 => {
                Err(Error::precondition(format!("grid size {grid_size} below 10")))
            }
            _ => Ok(()),
        }
    }
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        ThresholdPolicy::BestF1Sweep { grid_size: 1000 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        f1_of(self.precision(), self.recall())
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn f1_of(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub policy: ThresholdPolicy,
    pub threshold: f64,
    pub point_adjust: bool,
    pub oracle_informed: bool,
    #[serde(flatten)]
    pub counts: Counts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch { expected: b, found: a });
    }
    Ok(())
}

/// Per-index tally of predictions against labels.
pub fn prf(predictions: &[u8], labels: &[u8]) -> Result<Counts> {
    check_lengths(predictions.len(), labels.len())?;
    let mut c = Counts::default();
    for (&p, &l) in predictions.iter().zip(labels) {
        match (p != 0, l != 0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// Maximal runs `[start, end)` of positive labels.
pub fn label_segments(labels: &[u8]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &l) in labels.iter().enumerate() {
        match (l != 0, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, labels.len()));
    }
    out
}

/// Marks every point of a labeled segment as detected when any of its points
/// is predicted.
pub fn point_adjust(predictions: &[u8], labels: &[u8]) -> Result<Vec<u8>> {
    check_lengths(predictions.len(), labels.len())?;
    let mut out = predictions.to_vec();
    for (s, e) in label_segments(labels) {
        if predictions[s..e].iter().any(|&p| p != 0) {
            out[s..e].fill(1);
        }
    }
    Ok(out)
}

fn check_scores(scores: &[f64]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::EmptyInput);
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::precondition("scores must be finite"));
    }
    Ok(())
}

/// Binary predictions under a fixed threshold: ratio policy uses `>`, the
/// sweep policies use `≥`.
pub fn predict(scores: &[f64], threshold: f64, policy: &ThresholdPolicy) -> Vec<u8> {
    match policy {
        ThresholdPolicy::RatioPercentile { .. } => scores.iter().map(|&s| u8::from(s > threshold)).collect(),
        _ => scores.iter().map(|&s| u8::from(s >= threshold)).collect(),
    }
}

/// Chooses a threshold and returns it with the (unadjusted) predictions.
pub fn apply_threshold(scores: &[f64], policy: &ThresholdPolicy, labels: Option<&[u8]>, adjust: bool) -> Result<(f64, Vec<u8>)> {
    check_scores(scores)?;
    policy.validate()?;
    let threshold = match *policy {
        ThresholdPolicy::RatioPercentile { ratio } => quantile(scores, 1.0 - ratio),
        _ => {
            let labels = labels.ok_or_else(|| Error::precondition("best-F1 thresholds need labels"))?;
            check_lengths(scores.len(), labels.len())?;
            let candidates = candidate_thresholds(scores, policy);
            best_threshold(scores, labels, &candidates, adjust).0
        }
    };
    Ok((threshold, predict(scores, threshold, policy)))
}

fn candidate_thresholds(scores: &[f64], policy: &ThresholdPolicy) -> Vec<f64> {
    match *policy {
        ThresholdPolicy::BestF1Sweep { grid_size } => geometric_grid(scores, grid_size),
        _ => {
            let mut v = scores.to_vec();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        }
    }
}

/// `grid_size` thresholds in `(min, max]`, spaced geometrically in their
/// distance above the minimum (from `1e-6` of the range up to the maximum).
pub fn geometric_grid(scores: &[f64], grid_size: usize) -> Vec<f64> {
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if span <= 0.0 {
        return vec![hi];
    }
    let steps = grid_size.max(2) - 1;
    let mut grid: Vec<f64> = (0..=steps)
        .map(|k| {
            let frac = 10f64.powf(-6.0 * (1.0 - k as f64 / steps as f64));
            if k == steps {
                hi
            } else {
                lo + span * frac
            }
        })
        .collect();
    grid.dedup();
    grid
}

/// Counts at each candidate threshold (`score ≥ t`), computed from sorted
/// scores: with adjustment, a segment contributes its full length once its
/// maximum reaches `t`.
pub fn counts_at_thresholds(scores: &[f64], labels: &[u8], thresholds: &[f64], adjust: bool) -> Vec<Counts> {
    let mut normal: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == 0)
        .map(|(&s, _)| s)
        .collect();
    normal.sort_by(f64::total_cmp);
    // (key score, weight) for the positive side
    let mut positive: Vec<(f64, usize)> = if adjust {
        label_segments(labels)
            .into_iter()
            .map(|(s, e)| {
                let max = scores[s..e].iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (max, e - s)
            })
            .collect()
    } else {
        scores
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l != 0)
            .map(|(&s, _)| (s, 1))
            .collect()
    };
    positive.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total_pos: usize = positive.iter().map(|p| p.1).sum();
    // suffix sums of weights: weight of keys at index >= i
    let mut suffix = vec![0usize; positive.len() + 1];
    for i in (0..positive.len()).rev() {
        suffix[i] = suffix[i + 1] + positive[i].1;
    }
    thresholds
        .iter()
        .map(|&t| {
            let first_normal = normal.partition_point(|&s| s < t);
            let fp = normal.len() - first_normal;
            let first_pos = positive.partition_point(|p| p.0 < t);
            let tp = suffix[first_pos];
            Counts {
                tp,
                fp,
                fn_: total_pos - tp,
                tn: first_normal,
            }
        })
        .collect()
}

/// Highest-F1 threshold among `candidates`; ties go to the lower threshold.
fn best_threshold(scores: &[f64], labels: &[u8], candidates: &[f64], adjust: bool) -> (f64, Counts) {
    let counts = counts_at_thresholds(scores, labels, candidates, adjust);
    let mut best = (candidates[0], counts[0]);
    let mut best_f1 = counts[0].f1();
    for (&t, c) in candidates.iter().zip(&counts).skip(1) {
        let f = c.f1();
        if f > best_f1 || (f == best_f1 && t < best.0) {
            best = (t, *c);
            best_f1 = f;
        }
    }
    best
}

/// One row of a threshold sweep dump.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Metrics at every threshold of a geometric grid, for offline analysis.
pub fn sweep_dump(scores: &[f64], labels: &[u8], grid_size: usize, adjust: bool) -> Result<Vec<SweepPoint>> {
    check_scores(scores)?;
    check_lengths(scores.len(), labels.len())?;
    let grid = geometric_grid(scores, grid_size);
    Ok(grid
        .iter()
        .zip(counts_at_thresholds(scores, labels, &grid, adjust))
        .map(|(&threshold, c)| SweepPoint {
            threshold,
            precision: c.precision(),
            recall: c.recall(),
            f1: c.f1(),
        })
        .collect())
}

/// Threshold → optional point adjustment → counts.
pub fn evaluate(scores: &[f64], labels: &[u8], policy: &ThresholdPolicy, adjust: bool) -> Result<EvalReport> {
    check_lengths(scores.len(), labels.len())?;
    let (threshold, predictions) = apply_threshold(scores, policy, Some(labels), adjust)?;
    let predictions = if adjust {
        point_adjust(&predictions, labels)?
    } else {
        predictions
    };
    let counts = prf(&predictions, labels)?;
    Ok(EvalReport {
        policy: *policy,
        threshold,
        point_adjust: adjust,
        oracle_informed: policy.oracle_informed(),
        counts,
        precision: counts.precision(),
        recall: counts.recall(),
        f1: counts.f1(),
    })
}
