use serde::{Deserialize, Serialize};

use super::TimeSeriesDataset;

/// Allowed gap between the manifest anomaly fraction and the observed label
/// mean (half a percentage point).
pub const ANOMALY_FRACTION_TOLERANCE: f64 = 0.005;

/// Shape and anomaly rate a dataset on disk is expected to have.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub n_dims: usize,
    pub train_rows: usize,
    pub test_rows: usize,
    pub anomaly_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    /// Channel order used when per-channel files were concatenated into one
    /// matrix (MSL/SMAP ship per-channel).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub concatenation_order: Vec<String>,
    /// Overrides the `floor(n/2)` half-dimension tier.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub half_dim: Option<usize>,
}

impl DatasetManifest {
    pub fn new(
        name: impl Into<String>,
        n_dims: usize,
        train_rows: usize,
        test_rows: usize,
        anomaly_fraction: f64,
    ) -> Self {
        Self {
            name: name.into(),
            n_dims,
            train_rows,
            test_rows,
            anomaly_fraction,
            source: None,
            concatenation_order: Vec::new(),
            half_dim: None,
        }
    }

    /// Mars Science Laboratory rover telemetry (NASA).
    pub fn msl() -> Self {
        Self {
            source: Some("Hundman et al., KDD 2018 (NASA telemetry)".into()),
            ..Self::new("MSL", 55, 58317, 73729, 0.1072)
        }
    }

    /// Soil Moisture Active Passive satellite telemetry (NASA).
    pub fn smap() -> Self {
        Self {
            source: Some("Hundman et al., KDD 2018 (NASA telemetry)".into()),
            ..Self::new("SMAP", 25, 135183, 427617, 0.1313)
        }
    }

    /// Secure Water Treatment testbed.
    pub fn swat() -> Self {
        Self {
            source: Some("Mathur & Tippenhauer, CySWater 2016; Goh et al., CRITIS 2016".into()),
            ..Self::new("SWaT", 51, 495000, 449919, 0.1198)
        }
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name.to_ascii_uppercase().as_str() {
            "MSL" => Some(Self::msl()),
            "SMAP" => Some(Self::smap()),
            "SWAT" => Some(Self::swat()),
            _ => None,
        }
    }

    /// Half-dimension tier: the override if present, else `floor(n/2)`.
    pub fn half_dim(&self) -> usize {
        self.half_dim.unwrap_or(self.n_dims / 2)
    }

    pub fn is_valid(&self) -> bool {
        self.n_dims > 0
            && self.train_rows > 0
            && self.test_rows > 0
            && self.anomaly_fraction > 0.0
            && self.anomaly_fraction < 1.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldCheck {
    pub field: String,
    pub expected: String,
    pub observed: String,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub dataset: String,
    pub checks: Vec<FieldCheck>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &FieldCheck> {
        self.checks.iter().filter(|c| !c.pass)
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "dataset {}", self.dataset)?;
        for c in &self.checks {
            writeln!(
                f,
                "  {:<18} expected {:>10}  observed {:>10}  {}",
                c.field,
                c.expected,
                c.observed,
                if c.pass { "ok" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

/// Compares the observed shapes and label mean against the manifest.
pub fn validate_manifest(ds: &TimeSeriesDataset) -> ValidationReport {
    let m = &ds.manifest;
    let mut checks = Vec::new();
    let mut count = |field: &str, expected: usize, observed: usize| {
        checks.push(FieldCheck {
            field: field.into(),
            expected: expected.to_string(),
            observed: observed.to_string(),
            pass: expected == observed,
        });
    };
    count("train_rows", m.train_rows, ds.train.rows());
    count("test_rows", m.test_rows, ds.test.rows());
    count("n_dims", m.n_dims, ds.train.cols());
    count("test_dims", m.n_dims, ds.test.cols());
    count("label_rows", ds.test.rows(), ds.labels.len());
    let observed = ds.label_fraction();
    checks.push(FieldCheck {
        field: "anomaly_fraction".into(),
        expected: format!("{:.4}", m.anomaly_fraction),
        observed: format!("{observed:.4}"),
        pass: (observed - m.anomaly_fraction).abs() <= ANOMALY_FRACTION_TOLERANCE,
    });
    ValidationReport {
        dataset: m.name.clone(),
        checks,
    }
}

/// Checks a dataset that claims to be one of the published benchmarks
/// against the published shape. The anomaly fraction must agree to the four
/// decimals it is published with. `None` for other names.
pub fn validate_against_published(ds: &TimeSeriesDataset) -> Option<ValidationReport> {
    let published = DatasetManifest::builtin(&ds.manifest.name)?;
    let mut checks = Vec::new();
    for (field, expected, observed) in [
        ("train_rows", published.train_rows, ds.train.rows()),
        ("test_rows", published.test_rows, ds.test.rows()),
        ("n_dims", published.n_dims, ds.train.cols()),
    ] {
        checks.push(FieldCheck {
            field: field.into(),
            expected: expected.to_string(),
            observed: observed.to_string(),
            pass: expected == observed,
        });
    }
    let expected = format!("{:.4}", published.anomaly_fraction);
    let observed = format!("{:.4}", ds.label_fraction());
    checks.push(FieldCheck {
        field: "anomaly_fraction".into(),
        pass: expected == observed,
        expected,
        observed,
    });
    Some(ValidationReport {
        dataset: format!("{} (published)", published.name),
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Matrix;

    fn shell(manifest: DatasetManifest, train_rows: usize, test_rows: usize, positives: usize) -> TimeSeriesDataset {
        let n = manifest.n_dims;
        let mut labels = vec![0u8; test_rows];
        labels[..positives].iter_mut().for_each(|l| *l = 1);
        TimeSeriesDataset {
            manifest,
            train: Matrix::zeros(train_rows, n),
            test: Matrix::zeros(test_rows, n),
            labels,
        }
    }

    #[test]
    fn builtin_table_values() {
        let msl = DatasetManifest::msl();
        assert_eq!((msl.train_rows, msl.test_rows, msl.n_dims), (58317, 73729, 55));
        assert_eq!(msl.anomaly_fraction, 0.1072);
        let swat = DatasetManifest::swat();
        assert_eq!((swat.train_rows, swat.test_rows, swat.n_dims), (495000, 449919, 51));
        assert_eq!(swat.anomaly_fraction, 0.1198);
        assert_eq!(DatasetManifest::builtin("smap").unwrap().n_dims, 25);
        assert_eq!(msl.half_dim(), 27);
        assert_eq!(DatasetManifest::smap().half_dim(), 12);
        assert_eq!(swat.half_dim(), 25);
    }

    #[test]
    fn published_check_uses_four_decimals() {
        // 0.1072 · 73729 = 7903.7; 7904 rounds to 0.1072, 7950 to 0.1078
        let ok = shell(DatasetManifest::msl(), 58317, 73729, 7904);
        assert!(validate_against_published(&ok).unwrap().passed());
        let off = shell(DatasetManifest::msl(), 58317, 73729, 7950);
        let report = validate_against_published(&off).unwrap();
        assert_eq!(report.failures().map(|c| c.field.as_str()).collect::<Vec<_>>(), ["anomaly_fraction"]);
        let mut other = ok.clone();
        other.manifest.name = "custom".into();
        assert!(validate_against_published(&other).is_none());
    }

    #[test]
    fn smap_shaped_data_passes() {
        // 0.1313 · 427617 ≈ 56146
        let ds = shell(DatasetManifest::smap(), 135183, 427617, 56146);
        let report = validate_manifest(&ds);
        assert!(report.passed(), "{report}");
    }

    #[test]
    fn truncated_test_fails_on_test_rows() {
        let positives = (0.1072f64 * 73000.0).round() as usize;
        let ds = shell(DatasetManifest::msl(), 58317, 73000, positives);
        let report = validate_manifest(&ds);
        let failed: Vec<_> = report.failures().map(|c| c.field.as_str()).collect();
        assert_eq!(failed, vec!["test_rows"]);
    }

    #[test]
    fn manifest_json_keys() {
        let json = r#"{"name":"X","n_dims":3,"train_rows":10,"test_rows":5,"anomaly_fraction":0.1}"#;
        let m: DatasetManifest = serde_json::from_str(json).unwrap();
        assert_eq!(m, DatasetManifest::new("X", 3, 10, 5, 0.1));
        assert_eq!(serde_json::to_string(&m).unwrap(), json);
    }
}
