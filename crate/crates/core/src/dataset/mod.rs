//! Benchmark datasets: manifests, CSV layout, standardization, windowing and
//! the synthetic generator used for desk-scale experiments.

mod io;
mod manifest;
mod synthetic;
mod transform;

pub use io::{load_dataset, load_dataset_dir, read_labels_csv, read_matrix_csv, write_dataset};
pub use manifest::{validate_against_published, validate_manifest, DatasetManifest, FieldCheck, ValidationReport};
pub use synthetic::{generate_synthetic, AnomalyKind, AnomalySpec, SyntheticSpec};
pub use transform::{make_windows, normalize, standardize, Normalization, Scaler, Window, WindowConfig};

use crate::Matrix;

/// Train split, test split and test labels of one multivariate series.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeriesDataset {
    pub manifest: DatasetManifest,
    pub train: Matrix,
    pub test: Matrix,
    pub labels: Vec<u8>,
}

impl TimeSeriesDataset {
    pub fn n_dims(&self) -> usize {
        self.train.cols()
    }

    /// Fraction of anomalous test timesteps.
    pub fn label_fraction(&self) -> f64 {
        if self.labels.is_empty() {
            return 0.0;
        }
        self.labels.iter().map(|&l| l as usize).sum::<usize>() as f64 / self.labels.len() as f64
    }
}
