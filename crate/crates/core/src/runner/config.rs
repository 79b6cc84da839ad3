use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dataset::{
    generate_synthetic, load_dataset_dir, normalize, DatasetManifest, Normalization, SyntheticSpec,
    TimeSeriesDataset,
};
use crate::error::{Error, Result};
use crate::eval::ThresholdPolicy;
use crate::mutant::{MutantConfig, MIN_DIMS};
use crate::reduce::{ReducerSpec, Technique, TsneParams, UmapParams};
use crate::transformer::TransformerConfig;

/// Environment variable that replaces the configured seed list.
pub const SEED_ENV: &str = "DRTSAD_SEED";

/// Target dimensionality of a grid row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tier {
    Original,
    /// `floor(n/2)` unless the manifest overrides it.
    Half,
    Fixed(usize),
}

/// The lowest dimensionality MUTANT accepts, usable as `"lowest"` in configs.
pub const LOWEST_MUTANT_TIER: Tier = Tier::Fixed(MIN_DIMS);

impl Tier {
    pub fn resolve(self, manifest: &DatasetManifest) -> usize {
        match self {
            Tier::Original => manifest.n_dims,
            Tier::Half => manifest.half_dim(),
            Tier::Fixed(m) => m,
        }
    }

    /// Display order: original, half, then fixed tiers from high to low.
    pub fn sort_key(self) -> (u8, std::cmp::Reverse<usize>) {
        match self {
            Tier::Original => (0, std::cmp::Reverse(0)),
            Tier::Half => (1, std::cmp::Reverse(0)),
            Tier::Fixed(m) => (2, std::cmp::Reverse(m)),
        }
    }

    pub fn label(self) -> String {
        match self {
            Tier::Original => "(Original)".into(),
            Tier::Half => "To Half Dim.".into(),
            Tier::Fixed(m) => m.to_string(),
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tier::Original => f.write_str("original"),
            Tier::Half => f.write_str("half"),
            Tier::Fixed(m) => write!(f, "{m}"),
        }
    }
}

impl std::str::FromStr for Tier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "original" => Ok(Tier::Original),
            "half" => Ok(Tier::Half),
            "lowest" => Ok(LOWEST_MUTANT_TIER),
            other => other
                .parse::<usize>()
                .ok()
                .filter(|&m| m > 0)
                .map(Tier::Fixed)
                .ok_or_else(|| Error::Config(format!("unknown dimension tier {s:?}"))),
        }
    }
}

impl Serialize for Tier {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Tier::Fixed(m) => s.serialize_u64(*m as u64),
            other => s.serialize_str(&other.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for Tier {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Dim(usize),
            Name(String),
        }
        match Repr::deserialize(d)? {
            Repr::Dim(0) => Err(serde::de::Error::custom("dimension tier must be positive")),
            Repr::Dim(m) => Ok(Tier::Fixed(m)),
            Repr::Name(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Mutant,
    Transformer,
}

impl ModelKind {
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Mutant => "MUTANT",
            ModelKind::Transformer => "Anomaly-Transformer",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            ModelKind::Mutant => "mutant",
            ModelKind::Transformer => "transformer",
        }
    }

    /// Constraint that rules out a cell at `dims` inputs, if any.
    pub fn constraint(self, dims: usize) -> Option<String> {
        match self {
            ModelKind::Mutant if dims < MIN_DIMS => Some(Error::DimensionTooLow { dims }.to_string()),
            _ => None,
        }
    }
}

/// A reducer column of the grid; `none` only pairs with the original tier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReducerChoice {
    None,
    #[serde(untagged)]
    Technique(Technique),
}

impl ReducerChoice {
    pub fn label(self) -> &'static str {
        match self {
            ReducerChoice::None => "None",
            ReducerChoice::Technique(t) => t.label(),
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            ReducerChoice::None => "none",
            ReducerChoice::Technique(t) => t.slug(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum DetectorEntry {
    Mutant {
        #[serde(default)]
        config: MutantConfig,
        /// Restricts this detector to a subset of the grid tiers.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tiers: Option<Vec<Tier>>,
    },
    Transformer {
        #[serde(default)]
        config: TransformerConfig,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tiers: Option<Vec<Tier>>,
    },
}

impl DetectorEntry {
    pub fn kind(&self) -> ModelKind {
        match self {
            DetectorEntry::Mutant { .. } => ModelKind::Mutant,
            DetectorEntry::Transformer { .. } => ModelKind::Transformer,
        }
    }

    pub fn tiers(&self) -> Option<&[Tier]> {
        match self {
            DetectorEntry::Mutant { tiers, .. } | DetectorEntry::Transformer { tiers, .. } => tiers.as_deref(),
        }
    }
}

/// Either a directory in the canonical layout or a synthetic spec.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    /// Defaults to the manifest (or synthetic spec) name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
    /// Overrides the manifest's half-dimension tier.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub half_dim: Option<usize>,
}

impl DatasetEntry {
    pub fn synthetic(spec: SyntheticSpec) -> Self {
        Self {
            name: None,
            path: None,
            synthetic: Some(spec),
            half_dim: None,
        }
    }

    pub fn load(&self) -> Result<TimeSeriesDataset> {
        let mut ds = match (&self.path, &self.synthetic) {
            (Some(p), None) => load_dataset_dir(p)?,
            (None, Some(s)) => generate_synthetic(s)?,
            _ => return Err(Error::Config("dataset entries need exactly one of `path` or `synthetic`".into())),
        };
        if let Some(name) = &self.name {
            ds.manifest.name = name.clone();
        }
        if self.half_dim.is_some() {
            ds.manifest.half_dim = self.half_dim;
        }
        Ok(ds)
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_true() -> bool {
    true
}
fn default_output() -> PathBuf {
    PathBuf::from("runs/grid")
}
fn default_compute_tag() -> String {
    "CPU".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentGridConfig {
    pub datasets: Vec<DatasetEntry>,
    pub reducers: Vec<ReducerChoice>,
    pub tiers: Vec<Tier>,
    pub detectors: Vec<DetectorEntry>,
    #[serde(default)]
    pub threshold: ThresholdPolicy,
    #[serde(default = "default_true")]
    pub point_adjust: bool,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub resume: bool,
    /// Applied to the raw data and again to every reduced dataset.
    #[serde(default)]
    pub normalization: Normalization,
    #[serde(default)]
    pub umap: UmapParams,
    #[serde(default)]
    pub tsne: TsneParams,
    /// Free-form host tag carried into the timing table.
    #[serde(default = "default_compute_tag")]
    pub compute_tag: String,
}

impl ExperimentGridConfig {
    /// Reads a grid file; relative dataset and output paths are taken from the
    /// file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: Self = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        for d in &mut cfg.datasets {
            if let Some(p) = &d.path {
                if p.is_relative() {
                    d.path = Some(base.join(p));
                }
            }
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    /// Replaces the seed list with `DRTSAD_SEED` when it is set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            let seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV} must be an unsigned integer, got {v:?}")))?;
            self.seeds = vec![seed];
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let empty = |what: &str| Err(Error::Config(format!("grid needs at least one {what}")));
        if self.datasets.is_empty() {
            return empty("dataset");
        }
        if self.reducers.is_empty() {
            return empty("reducer");
        }
        if self.tiers.is_empty() {
            return empty("dimension tier");
        }
        if self.detectors.is_empty() {
            return empty("detector");
        }
        if self.seeds.is_empty() {
            return empty("seed");
        }
        self.threshold.validate()?;
        for d in &self.datasets {
            if d.path.is_some() == d.synthetic.is_some() {
                return Err(Error::Config("dataset entries need exactly one of `path` or `synthetic`".into()));
            }
        }
        let mut kinds: Vec<ModelKind> = self.detectors.iter().map(|d| d.kind()).collect();
        kinds.sort();
        if kinds.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("each detector model may appear once".into()));
        }
        Ok(())
    }

    pub(crate) fn reducer_spec(&self, technique: Technique, dim: usize, seed: u64) -> ReducerSpec {
        ReducerSpec {
            umap: self.umap.clone(),
            tsne: self.tsne.clone(),
            ..ReducerSpec::new(technique, dim, seed)
        }
    }

    pub(crate) fn load_dataset(&self, idx: usize) -> Result<TimeSeriesDataset> {
        let ds = self.datasets[idx].load()?;
        Ok(normalize(&ds, self.normalization).0)
    }
}
