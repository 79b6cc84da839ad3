//! The four reducers behind one fit/transform interface, mapping `n` input
//! features to `m` output features.
//!
//! PCA, random projection and UMAP are fitted on the train split by default
//! and applied to test rows out of sample. t-SNE has no native transform, so
//! it embeds train and test jointly.

mod neighbors;
mod pca;
mod random_projection;
mod tsne;
mod umap;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::TimeSeriesDataset;
use crate::error::{Error, Result};
use crate::numerics::RandomSource;
use crate::persist::TensorBundle;
use crate::Matrix;

pub use neighbors::exact_knn;
pub use pca::{fit_pca, PcaModel};
pub use random_projection::{fit_random_projection, RandomProjectionModel};
pub use tsne::{
    assign_out_of_sample, calibrate_row, conditional_affinities, entropy, fit_tsne_joint,
    joint_affinities, TsneModel, TsneParams,
};
pub use umap::{fit_ab, fit_umap, smooth_knn_scale, Edge, UmapModel, UmapParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Technique {
    #[serde(rename = "pca", alias = "PCA")]
    Pca,
    #[serde(rename = "random_projection", alias = "rp", alias = "RandomProjection")]
    RandomProjection,
    #[serde(rename = "umap", alias = "UMAP")]
    Umap,
    #[serde(rename = "tsne", alias = "TSNE", alias = "t-SNE")]
    Tsne,
}

impl Technique {
    pub fn label(self) -> &'static str {
        match self {
            Technique::Pca => "PCA",
            Technique::RandomProjection => "Rand. Proj.",
            Technique::Umap => "UMAP",
            Technique::Tsne => "t-SNE",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            Technique::Pca => "pca",
            Technique::RandomProjection => "random_projection",
            Technique::Umap => "umap",
            Technique::Tsne => "tsne",
        }
    }

    /// Largest target dimension the technique accepts.
    pub fn max_target_dim(self) -> Option<usize> {
        match self {
            Technique::Tsne => Some(TSNE_MAX_DIM),
            _ => None,
        }
    }
}

pub const TSNE_MAX_DIM: usize = 3;

/// Which rows a reducer is fitted on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitOn {
    /// Train split only; test rows go through the out-of-sample transform.
    #[default]
    Train,
    /// Train and test rows together.
    Joint,
}

fn default_cap() -> usize {
    20_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReducerSpec {
    pub technique: Technique,
    pub target_dim: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub umap: UmapParams,
    #[serde(default)]
    pub tsne: TsneParams,
    /// Defaults to `train` for PCA/RP/UMAP; t-SNE always fits jointly unless
    /// explicitly set to `train`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_on: Option<FitOn>,
    /// UMAP/t-SNE fit on a seeded subsample above this many rows.
    #[serde(default = "default_cap")]
    pub subsample_cap: usize,
}

impl ReducerSpec {
    pub fn new(technique: Technique, target_dim: usize, seed: u64) -> Self {
        Self {
            technique,
            target_dim,
            seed,
            umap: UmapParams::default(),
            tsne: TsneParams::default(),
            fit_on: None,
            subsample_cap: default_cap(),
        }
    }

    pub fn fit_on(&self) -> FitOn {
        self.fit_on.unwrap_or(match self.technique {
            Technique::Tsne => FitOn::Joint,
            _ => FitOn::Train,
        })
    }

    /// Checks `1 <= m < n` and the technique-specific bounds.
    pub fn validate(&self, n: usize) -> Result<()> {
        let m = self.target_dim;
        if m == 0 || m >= n {
            return Err(Error::precondition(format!(
                "target dimension {m} must satisfy 1 <= m < n = {n}"
            )));
        }
        if let Some(max) = self.technique.max_target_dim() {
            if m > max {
                return Err(Error::precondition(format!(
                    "{} is limited to target dimensions <= {max}, got {m}",
                    self.technique.label()
                )));
            }
        }
        if self.technique == Technique::Umap && self.umap.n_neighbors < 2 {
            return Err(Error::precondition("UMAP requires n_neighbors >= 2"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ReducerPayload {
    Pca(PcaModel<f64>),
    RandomProjection(RandomProjectionModel<f64>),
    Umap(UmapModel),
    Tsne {
        model: TsneModel,
        /// Input rows matching `model.embedding`, for out-of-sample placement.
        reference: Matrix,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct FittedReducer {
    pub spec: ReducerSpec,
    pub input_dim: usize,
    pub payload: ReducerPayload,
}

impl FittedReducer {
    pub fn output_dim(&self) -> usize {
        self.spec.target_dim
    }

    /// Maps rows from `n` to `m` features. For t-SNE this places rows by
    /// perplexity-weighted neighbors in the stored joint embedding.
    pub fn transform(&self, data: &Matrix) -> Result<Matrix> {
        if data.cols() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                found: data.cols(),
            });
        }
        match &self.payload {
            ReducerPayload::Pca(p) => p.transform(data),
            ReducerPayload::RandomProjection(r) => r.transform(data),
            ReducerPayload::Umap(u) => u.transform(data),
            ReducerPayload::Tsne { model, reference } => Ok(assign_out_of_sample(
                reference,
                &model.embedding,
                data,
                self.spec.tsne.perplexity,
            )),
        }
    }

    /// Optimization trace for the stochastic reducers.
    pub fn loss_trace(&self) -> Option<&[f64]> {
        match &self.payload {
            ReducerPayload::Umap(u) => Some(&u.loss_trace),
            ReducerPayload::Tsne { model, .. } => Some(&model.kl_trace),
            _ => None,
        }
    }

    pub fn to_bundle(&self) -> Result<TensorBundle> {
        let mut b = TensorBundle::new(serde_json::json!({
            "kind": "reducer",
            "spec": serde_json::to_value(&self.spec)?,
            "input_dim": self.input_dim,
        }));
        match &self.payload {
            ReducerPayload::Pca(p) => {
                b.insert_vec("mean", &p.mean);
                b.insert_matrix("components", &p.components);
                b.insert_vec("eigenvalues", &p.eigenvalues);
            }
            ReducerPayload::RandomProjection(r) => b.insert_matrix("matrix", &r.matrix),
            ReducerPayload::Umap(u) => {
                b.insert_matrix("train_data", &u.train_data);
                b.insert_matrix("embedding", &u.embedding);
                let flat: Vec<f64> = u
                    .edges
                    .iter()
                    .flat_map(|e| [e.head as f64, e.tail as f64, e.weight])
                    .collect();
                b.insert("edges", vec![u.edges.len(), 3], flat);
                b.insert_vec("ab", &[u.a, u.b]);
                b.insert_vec("loss_trace", &u.loss_trace);
            }
            ReducerPayload::Tsne { model, reference } => {
                b.insert_matrix("embedding", &model.embedding);
                b.insert_matrix("reference", reference);
                b.insert_vec("kl_trace", &model.kl_trace);
                b.insert_vec(
                    "ranges",
                    &[
                        model.train_range.start as f64,
                        model.train_range.end as f64,
                        model.test_range.start as f64,
                        model.test_range.end as f64,
                    ],
                );
            }
        }
        Ok(b)
    }

    pub fn from_bundle(b: &TensorBundle) -> Result<Self> {
        let spec: ReducerSpec = serde_json::from_value(b.meta["spec"].clone())?;
        let input_dim = b.meta["input_dim"]
            .as_u64()
            .ok_or_else(|| Error::Config("reducer bundle lacks input_dim".into()))? as usize;
        let payload = match spec.technique {
            Technique::Pca => ReducerPayload::Pca(PcaModel {
                mean: b.vector("mean")?,
                components: b.matrix("components")?,
                eigenvalues: b.vector("eigenvalues")?,
            }),
            Technique::RandomProjection => ReducerPayload::RandomProjection(RandomProjectionModel {
                matrix: b.matrix("matrix")?,
            }),
            Technique::Umap => {
                let edges = b
                    .matrix("edges")?
                    .row_iter()
                    .map(|r| Edge {
                        head: r[0] as usize,
                        tail: r[1] as usize,
                        weight: r[2],
                    })
                    .collect();
                let ab = b.vector("ab")?;
                ReducerPayload::Umap(UmapModel {
                    params: spec.umap.clone(),
                    seed: spec.seed,
                    train_data: b.matrix("train_data")?,
                    embedding: b.matrix("embedding")?,
                    edges,
                    a: ab[0],
                    b: ab[1],
                    loss_trace: b.vector("loss_trace")?,
                })
            }
            Technique::Tsne => {
                let r = b.vector("ranges")?;
                ReducerPayload::Tsne {
                    model: TsneModel {
                        params: spec.tsne.clone(),
                        embedding: b.matrix("embedding")?,
                        train_range: r[0] as usize..r[1] as usize,
                        test_range: r[2] as usize..r[3] as usize,
                        kl_trace: b.vector("kl_trace")?,
                    },
                    reference: b.matrix("reference")?,
                }
            }
        };
        Ok(Self {
            spec,
            input_dim,
            payload,
        })
    }

    /// Writes `reducer.json` and `reducer.bin` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.to_bundle()?.save(dir, "reducer")
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Self::from_bundle(&TensorBundle::load(dir, "reducer")?)
    }
}

/// Seeded subsample of at most `cap` row indices (all rows when under the cap).
fn subsample(rows: usize, cap: usize, seed: u64) -> Vec<usize> {
    if rows <= cap {
        (0..rows).collect()
    } else {
        RandomSource::new(seed).fork(31).sample_indices(rows, cap)
    }
}

/// Fits a reducer for `ds`, returning it with the reduced train and test
/// matrices.
fn fit_and_reduce(ds: &TimeSeriesDataset, spec: &ReducerSpec) -> Result<(FittedReducer, Matrix, Matrix)> {
    let n = ds.n_dims();
    spec.validate(n)?;
    let m = spec.target_dim;
    let fit_rows = match spec.fit_on() {
        FitOn::Train => ds.train.clone(),
        FitOn::Joint => ds.train.vstack(&ds.test)?,
    };
    let wrap = |payload| FittedReducer {
        spec: spec.clone(),
        input_dim: n,
        payload,
    };
    match spec.technique {
        Technique::Pca | Technique::RandomProjection => {
            let fr = if spec.technique == Technique::Pca {
                wrap(ReducerPayload::Pca(fit_pca(&fit_rows, m)?))
            } else {
                let mut rng = RandomSource::new(spec.seed);
                wrap(ReducerPayload::RandomProjection(fit_random_projection(n, m, &mut rng)?))
            };
            let train = fr.transform(&ds.train)?;
            let test = fr.transform(&ds.test)?;
            Ok((fr, train, test))
        }
        Technique::Umap => {
            let idx = subsample(fit_rows.rows(), spec.subsample_cap, spec.seed);
            let fit_data = fit_rows.select_rows(&idx);
            let model = fit_umap(&fit_data, m, &spec.umap, spec.seed)?;
            let fitted_embedding = model.embedding.clone();
            let fr = wrap(ReducerPayload::Umap(model));
            // rows that took part in the fit keep their optimized coordinates
            let mut position = vec![usize::MAX; fit_rows.rows()];
            for (k, &i) in idx.iter().enumerate() {
                position[i] = k;
            }
            let reduce_split = |split: &Matrix, offset: usize| -> Result<Matrix> {
                let mut out = fr.transform(split)?;
                for i in 0..split.rows() {
                    if let Some(&k) = position.get(offset + i) {
                        if k != usize::MAX {
                            out.row_mut(i).copy_from_slice(fitted_embedding.row(k));
                        }
                    }
                }
                Ok(out)
            };
            let test_offset = match spec.fit_on() {
                FitOn::Train => usize::MAX / 2,
                FitOn::Joint => ds.train.rows(),
            };
            let train = reduce_split(&ds.train, 0)?;
            let test = reduce_split(&ds.test, test_offset)?;
            Ok((fr, train, test))
        }
        Technique::Tsne => {
            let idx = subsample(fit_rows.rows(), spec.subsample_cap.min(spec.tsne.max_rows), spec.seed);
            let fit_data = fit_rows.select_rows(&idx);
            let model = match spec.fit_on() {
                FitOn::Joint if idx.len() == fit_rows.rows() => {
                    fit_tsne_joint(&ds.train, &ds.test, m, &spec.tsne)?
                }
                _ => fit_tsne_joint(&fit_data, &Matrix::zeros(0, n), m, &spec.tsne)?,
            };
            let all_fitted = idx.len() == fit_rows.rows();
            let embedding = model.embedding.clone();
            let fr = wrap(ReducerPayload::Tsne {
                model,
                reference: fit_data,
            });
            match spec.fit_on() {
                FitOn::Joint if all_fitted => {
                    let t = ds.train.rows();
                    Ok((fr, embedding.slice_rows(0, t), embedding.slice_rows(t, embedding.rows())))
                }
                _ => {
                    let mut position = vec![usize::MAX; fit_rows.rows()];
                    for (k, &i) in idx.iter().enumerate() {
                        position[i] = k;
                    }
                    let mut all = fr.transform(&fit_rows)?;
                    for (i, &k) in position.iter().enumerate() {
                        if k != usize::MAX {
                            all.row_mut(i).copy_from_slice(embedding.row(k));
                        }
                    }
                    let t = ds.train.rows();
                    let train = all.slice_rows(0, t);
                    let test = if spec.fit_on() == FitOn::Joint {
                        all.slice_rows(t, all.rows())
                    } else {
                        fr.transform(&ds.test)?
                    };
                    Ok((fr, train, test))
                }
            }
        }
    }
}

/// Reduces both splits to `spec.target_dim` features. Labels and row counts
/// are untouched; the manifest's `n_dims` becomes `m`.
pub fn reduce_dataset(ds: &TimeSeriesDataset, spec: &ReducerSpec) -> Result<(TimeSeriesDataset, FittedReducer)> {
    let (fr, train, test) = fit_and_reduce(ds, spec)?;
    let mut manifest = ds.manifest.clone();
    manifest.n_dims = spec.target_dim;
    manifest.half_dim = None;
    Ok((
        TimeSeriesDataset {
            manifest,
            train,
            test,
            labels: ds.labels.clone(),
        },
        fr,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, DatasetManifest, SyntheticSpec};

    fn small() -> TimeSeriesDataset {
        generate_synthetic(&SyntheticSpec::balanced(10, 120, 80, 0.1, 1, 4)).unwrap()
    }

    #[test]
    fn identity_request_rejected() {
        let ds = small();
        for t in [Technique::Pca, Technique::RandomProjection, Technique::Umap, Technique::Tsne] {
            assert!(matches!(
                reduce_dataset(&ds, &ReducerSpec::new(t, 10, 0)),
                Err(Error::Precondition(_))
            ));
        }
        assert!(reduce_dataset(&ds, &ReducerSpec::new(Technique::Tsne, 4, 0)).is_err());
    }

    #[test]
    fn every_technique_keeps_rows_and_labels() {
        let ds = small();
        for t in [Technique::Pca, Technique::RandomProjection, Technique::Umap, Technique::Tsne] {
            let mut spec = ReducerSpec::new(t, 2, 5);
            spec.umap.epochs = 20;
            spec.tsne.iterations = 60;
            spec.tsne.exaggeration_iters = 20;
            let (out, fr) = reduce_dataset(&ds, &spec).unwrap();
            assert_eq!(out.labels, ds.labels, "{t:?}");
            assert_eq!(out.train.shape(), (120, 2));
            assert_eq!(out.test.shape(), (80, 2));
            assert_eq!(out.manifest.n_dims, 2);
            assert_eq!(fr.output_dim(), 2);
            assert!(out.train.all_finite() && out.test.all_finite());
        }
    }

    #[test]
    fn manifest_rewritten_for_msl_half_tier() {
        let ds = TimeSeriesDataset {
            manifest: DatasetManifest {
                train_rows: 40,
                test_rows: 30,
                ..DatasetManifest::msl()
            },
            train: RandomSource::new(1).normal_matrix(40, 55, 1.0),
            test: RandomSource::new(2).normal_matrix(30, 55, 1.0),
            labels: vec![0; 30],
        };
        let half = ds.manifest.half_dim();
        let (out, _) = reduce_dataset(&ds, &ReducerSpec::new(Technique::RandomProjection, half, 3)).unwrap();
        assert_eq!(out.manifest.n_dims, 27);
        assert_eq!((out.train.rows(), out.test.rows()), (40, 30));
    }

    #[test]
    fn save_load_each_payload() {
        let ds = small();
        for t in [Technique::Pca, Technique::RandomProjection, Technique::Umap, Technique::Tsne] {
            let mut spec = ReducerSpec::new(t, 3, 8);
            spec.umap.epochs = 8;
            spec.tsne.iterations = 30;
            spec.tsne.exaggeration_iters = 10;
            let (_, fr) = reduce_dataset(&ds, &spec).unwrap();
            let dir = tempfile::tempdir().unwrap();
            fr.save(dir.path()).unwrap();
            let back = FittedReducer::load(dir.path()).unwrap();
            assert_eq!(back, fr, "{t:?}");
            assert_eq!(back.transform(&ds.test).unwrap(), fr.transform(&ds.test).unwrap());
        }
    }

    #[test]
    fn subsampled_umap_covers_all_rows() {
        let ds = small();
        let mut spec = ReducerSpec::new(Technique::Umap, 2, 1);
        spec.umap.epochs = 10;
        spec.umap.n_neighbors = 5;
        spec.subsample_cap = 50;
        let (out, fr) = reduce_dataset(&ds, &spec).unwrap();
        assert_eq!(out.train.rows(), 120);
        match fr.payload {
            ReducerPayload::Umap(u) => assert_eq!(u.embedding.rows(), 50),
            _ => unreachable!(),
        }
    }

    #[test]
    fn spec_json_defaults() {
        let spec: ReducerSpec = serde_json::from_str(r#"{"technique":"tsne","target_dim":2}"#).unwrap();
        assert_eq!(spec.fit_on(), FitOn::Joint);
        assert_eq!(spec.tsne.perplexity, 30.0);
        assert_eq!(spec.umap.n_neighbors, 15);
        let spec: ReducerSpec = serde_json::from_str(r#"{"technique":"umap","target_dim":2}"#).unwrap();
        assert_eq!(spec.fit_on(), FitOn::Train);
    }
}
