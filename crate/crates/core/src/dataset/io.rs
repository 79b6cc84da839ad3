//! Canonical on-disk layout: headerless `train.csv` / `test.csv`, one 0/1 per
//! line in `labels.csv`, and `manifest.json`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::Matrix;

use super::{DatasetManifest, TimeSeriesDataset};

pub const TRAIN_FILE: &str = "train.csv";
pub const TEST_FILE: &str = "test.csv";
pub const LABELS_FILE: &str = "labels.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

fn mismatch(field: impl Into<String>, expected: impl ToString, found: impl ToString) -> Error {
    Error::ManifestMismatch {
        field: field.into(),
        expected: expected.to_string(),
        found: found.to_string(),
    }
}

/// Reads a headerless numeric CSV. `expected_cols` is enforced on every row.
pub fn read_matrix_csv(path: &Path, expected_cols: usize) -> Result<Matrix> {
    let name = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let reader = BufReader::new(File::open(path)?);
    let mut data = Vec::new();
    let mut rows = 0;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut cols = 0;
        for (j, cell) in line.split(',').enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                file: name.clone(),
                row: lineno + 1,
                col: j + 1,
                message: format!("not a number: {:?}", cell.trim()),
            })?;
            data.push(v);
            cols += 1;
        }
        if cols != expected_cols {
            return Err(mismatch(
                format!("{name} columns (line {})", lineno + 1),
                expected_cols,
                cols,
            ));
        }
        rows += 1;
    }
    Matrix::from_vec(rows, expected_cols, data)
}

pub fn read_labels_csv(path: &Path) -> Result<Vec<u8>> {
    let reader = BufReader::new(File::open(path)?);
    let mut labels = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let cell = line.trim();
        if cell.is_empty() {
            continue;
        }
        let label = match cell {
            "0" | "0.0" => 0,
            "1" | "1.0" => 1,
            other => {
                return Err(Error::Parse {
                    file: LABELS_FILE.into(),
                    row: lineno + 1,
                    col: 1,
                    message: format!("label must be 0 or 1, got {other:?}"),
                })
            }
        };
        labels.push(label);
    }
    Ok(labels)
}

/// Loads a dataset and checks its shapes against `manifest` exactly.
pub fn load_dataset(dir: &Path, manifest: DatasetManifest) -> Result<TimeSeriesDataset> {
    let train = read_matrix_csv(&dir.join(TRAIN_FILE), manifest.n_dims)?;
    if train.rows() != manifest.train_rows {
        return Err(mismatch("train_rows", manifest.train_rows, train.rows()));
    }
    let test = read_matrix_csv(&dir.join(TEST_FILE), manifest.n_dims)?;
    if test.rows() != manifest.test_rows {
        return Err(mismatch("test_rows", manifest.test_rows, test.rows()));
    }
    let labels = read_labels_csv(&dir.join(LABELS_FILE))?;
    if labels.len() != manifest.test_rows {
        return Err(mismatch("label_rows", manifest.test_rows, labels.len()));
    }
    Ok(TimeSeriesDataset {
        manifest,
        train,
        test,
        labels,
    })
}

/// Loads `manifest.json` from `dir`, then the data files.
pub fn load_dataset_dir(dir: &Path) -> Result<TimeSeriesDataset> {
    let manifest: DatasetManifest =
        serde_json::from_reader(BufReader::new(File::open(dir.join(MANIFEST_FILE))?))?;
    load_dataset(dir, manifest)
}

fn write_matrix_csv(path: &Path, m: &Matrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for row in m.row_iter() {
        let mut first = true;
        for v in row {
            if !first {
                w.write_all(b",")?;
            }
            first = false;
            // Display for f64 is the shortest string that parses back exactly.
            write!(w, "{v}")?;
        }
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the canonical layout (CSV files plus `manifest.json`).
pub fn write_dataset(ds: &TimeSeriesDataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_matrix_csv(&dir.join(TRAIN_FILE), &ds.train)?;
    write_matrix_csv(&dir.join(TEST_FILE), &ds.test)?;
    let mut w = BufWriter::new(File::create(dir.join(LABELS_FILE))?);
    for l in &ds.labels {
        writeln!(w, "{l}")?;
    }
    w.flush()?;
    let f = File::create(dir.join(MANIFEST_FILE))?;
    serde_json::to_writer_pretty(BufWriter::new(f), &ds.manifest)?;
    Ok(())
}
