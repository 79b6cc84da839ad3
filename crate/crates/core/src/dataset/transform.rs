use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Matrix;

use super::TimeSeriesDataset;

/// Per-feature preprocessing applied before reduction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    None,
    #[default]
    Zscore,
    Minmax,
}

/// Affine per-feature map `x ↦ (x - offset) / scale`, fitted on train.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Scaler {
    pub fn fit(train: &Matrix, kind: Normalization) -> Self {
        let d = train.cols();
        let n = train.rows().max(1) as f64;
        match kind {
            Normalization::None => Self {
                offset: vec![0.0; d],
                scale: vec![1.0; d],
            },
            Normalization::Zscore => {
                let offset = train.column_means();
                let mut var = vec![0.0; d];
                for row in train.row_iter() {
                    for ((v, &x), &mu) in var.iter_mut().zip(row).zip(&offset) {
                        *v += (x - mu) * (x - mu);
                    }
                }
                let scale = var
                    .iter()
                    .map(|v| {
                        let s = (v / n).sqrt();
                        if s > 0.0 && s.is_finite() {
                            s
                        } else {
                            1.0
                        }
                    })
                    .collect();
                Self { offset, scale }
            }
            Normalization::Minmax => {
                let mut lo = vec![f64::INFINITY; d];
                let mut hi = vec![f64::NEG_INFINITY; d];
                for row in train.row_iter() {
                    for j in 0..d {
                        lo[j] = lo[j].min(row[j]);
                        hi[j] = hi[j].max(row[j]);
                    }
                }
                let scale = lo
                    .iter()
                    .zip(&hi)
                    .map(|(l, h)| if h > l { h - l } else { 1.0 })
                    .collect();
                Self { offset: lo, scale }
            }
        }
    }

    pub fn apply(&self, m: &Matrix) -> Matrix {
        Matrix::from_fn(m.rows(), m.cols(), |i, j| {
            (m[(i, j)] - self.offset[j]) / self.scale[j]
        })
    }
}

/// Z-scores both splits with train statistics. Constant train features keep
/// scale 1 (centered only).
pub fn standardize(ds: &TimeSeriesDataset) -> (TimeSeriesDataset, Scaler) {
    normalize(ds, Normalization::Zscore)
}

pub fn normalize(ds: &TimeSeriesDataset, kind: Normalization) -> (TimeSeriesDataset, Scaler) {
    let scaler = Scaler::fit(&ds.train, kind);
    let out = TimeSeriesDataset {
        manifest: ds.manifest.clone(),
        train: scaler.apply(&ds.train),
        test: scaler.apply(&ds.test),
        labels: ds.labels.clone(),
    };
    (out, scaler)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub length: usize,
    pub stride: usize,
}

impl WindowConfig {
    pub fn new(length: usize, stride: usize) -> Result<Self> {
        if length == 0 || stride == 0 || stride > length {
            return Err(Error::precondition(format!(
                "window requires 1 <= stride <= length, got length {length}, stride {stride}"
            )));
        }
        Ok(Self { length, stride })
    }

    /// `floor((T - L) / stride) + 1` start offsets.
    pub fn starts(&self, len: usize) -> Result<Vec<usize>> {
        if len < self.length {
            return Err(Error::SeriesTooShort {
                length: len,
                window: self.length,
            });
        }
        Ok((0..=(len - self.length) / self.stride)
            .map(|k| k * self.stride)
            .collect())
    }

    /// Like [`starts`](Self::starts), plus one tail-aligned window when the
    /// stride grid leaves trailing rows uncovered.
    pub fn covering_starts(&self, len: usize) -> Result<Vec<usize>> {
        let mut starts = self.starts(len)?;
        let last = *starts.last().expect("at least one window");
        if last + self.length < len {
            starts.push(len - self.length);
        }
        Ok(starts)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub start: usize,
    pub data: Matrix,
}

/// Contiguous row windows of `m`.
pub fn make_windows(m: &Matrix, cfg: WindowConfig) -> Result<Vec<Window>> {
    Ok(cfg
        .starts(m.rows())?
        .into_iter()
        .map(|start| Window {
            start,
            data: m.slice_rows(start, start + cfg.length),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::DatasetManifest;
    use proptest::prelude::*;

    fn ds(train: Matrix, test: Matrix) -> TimeSeriesDataset {
        let labels = vec![0; test.rows()];
        TimeSeriesDataset {
            manifest: DatasetManifest::new("t", train.cols(), train.rows(), test.rows(), 0.1),
            train,
            test,
            labels,
        }
    }

    #[test]
    fn zscore_train_column() {
        // values 3 and 7 alternate: mean 5, population std 2
        let train = Matrix::from_fn(10, 1, |i, _| if i % 2 == 0 { 3.0 } else { 7.0 });
        let (out, scaler) = standardize(&ds(train, Matrix::zeros(2, 1)));
        assert_eq!(scaler.offset, vec![5.0]);
        assert_eq!(scaler.scale, vec![2.0]);
        let col = out.train.column(0);
        let mean: f64 = col.iter().sum::<f64>() / 10.0;
        let std = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 10.0).sqrt();
        assert!(mean.abs() < 1e-9 && (std - 1.0).abs() < 1e-9);
    }

    #[test]
    fn constant_column_is_centered_only() {
        let train = Matrix::filled(5, 1, 4.0);
        let test = Matrix::from_rows(&[[6.0]]).unwrap();
        let (out, _) = standardize(&ds(train, test));
        assert!(out.train.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(out.test[(0, 0)], 2.0);
    }

    #[test]
    fn test_split_uses_train_statistics() {
        let train = Matrix::from_fn(10, 2, |i, j| (i as f64) * (j as f64 + 1.0));
        let test = Matrix::from_fn(10, 2, |i, j| 100.0 + i as f64 - j as f64);
        let (out, _) = standardize(&ds(train.clone(), test.clone()));
        // recompute oracle: statistics from train only
        for j in 0..2 {
            let col = train.column(j);
            let mu = col.iter().sum::<f64>() / 10.0;
            let sd = (col.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / 10.0).sqrt();
            for i in 0..10 {
                let expected = (test[(i, j)] - mu) / sd;
                assert!((out.test[(i, j)] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn minmax_maps_train_to_unit_interval() {
        let train = Matrix::from_rows(&[[1.0], [3.0], [2.0]]).unwrap();
        let (out, _) = normalize(&ds(train, Matrix::zeros(1, 1)), Normalization::Minmax);
        assert_eq!(out.train.as_slice(), &[0.0, 1.0, 0.5]);
    }

    #[test]
    fn window_counts() {
        let m = Matrix::zeros(10, 2);
        let w = make_windows(&m, WindowConfig::new(5, 1).unwrap()).unwrap();
        assert_eq!(w.iter().map(|w| w.start).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(make_windows(&m, WindowConfig::new(5, 5).unwrap()).unwrap().len(), 2);
        assert!(matches!(
            make_windows(&Matrix::zeros(4, 2), WindowConfig::new(5, 1).unwrap()),
            Err(Error::SeriesTooShort { .. })
        ));
        assert!(WindowConfig::new(5, 6).is_err());
    }

    proptest! {
        #[test]
        fn standardize_is_idempotent_on_train(vals in proptest::collection::vec(-1e3f64..1e3, 6..40)) {
            let train = Matrix::from_vec(vals.len() / 2, 2, vals[..vals.len() / 2 * 2].to_vec()).unwrap();
            let (once, _) = standardize(&ds(train, Matrix::zeros(1, 2)));
            let (twice, _) = standardize(&once);
            for (a, b) in once.train.as_slice().iter().zip(twice.train.as_slice()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn covering_windows_touch_every_row(len in 1usize..200, length in 1usize..40, stride_frac in 0.0f64..1.0) {
            prop_assume!(len >= length);
            let stride = 1 + ((length - 1) as f64 * stride_frac) as usize;
            let cfg = WindowConfig::new(length, stride).unwrap();
            let starts = cfg.covering_starts(len).unwrap();
            let mut covered = vec![false; len];
            for s in starts {
                prop_assert!(s + length <= len);
                covered[s..s + length].iter_mut().for_each(|c| *c = true);
            }
            prop_assert!(covered.iter().all(|&c| c));
            let exact = cfg.starts(len).unwrap();
            prop_assert_eq!(exact.len(), (len - length) / stride + 1);
        }
    }
}
