//! Grid runner: expands a config into cells (dataset × detector × tier ×
//! reducer × seed), runs them, and appends one record per cell to a JSON-lines
//! store.

mod config;
mod report;
mod store;

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{normalize, Normalization, TimeSeriesDataset};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport};
use crate::mutant::{score_mutant, train_mutant, MutantConfig};
use crate::numerics::derive_seed;
use crate::reduce::{reduce_dataset, Technique};
use crate::transformer::{score_series, train_minimax, TransformerConfig};

pub use config::{
    DatasetEntry, DetectorEntry, ExperimentGridConfig, ModelKind, ReducerChoice, Tier, LOWEST_MUTANT_TIER,
    SEED_ENV,
};
pub use report::{
    emit_results_table, emit_timing_outputs, parse_results_csv, reduction_percent, write_report, ResultsRow,
    ResultsTable, TimingAggregate, TimingOutputs, TimingRow,
};
pub use store::{latest_by_cell, read_store, StoreAppender};

pub const STORE_FILE: &str = "results.jsonl";
pub const TRACE_DIR: &str = "traces";

/// Identity of one grid cell.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    pub dataset: String,
    pub model: ModelKind,
    pub reducer: ReducerChoice,
    pub dim: usize,
    pub seed: u64,
}

impl CellKey {
    /// File-name-safe identifier.
    pub fn slug(&self) -> String {
        let raw = format!(
            "{}__{}__{}__{}__s{}",
            self.dataset,
            self.model.slug(),
            self.reducer.slug(),
            self.dim,
            self.seed
        );
        raw.chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellStatus {
    Done,
    Failed { reason: String },
    Skipped { constraint: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    #[serde(flatten)]
    pub key: CellKey,
    pub tier: Tier,
    /// Input dimensionality before reduction.
    pub original_dim: usize,
    #[serde(flatten)]
    pub status: CellStatus,
    pub reduction_secs: f64,
    pub training_secs: f64,
    pub scoring_secs: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<EvalReport>,
    /// Detector loss trace, relative to the output directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_trace: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reducer_trace: Option<PathBuf>,
    #[serde(default)]
    pub compute_tag: String,
    /// Wall-clock completion time, milliseconds since the Unix epoch.
    #[serde(default)]
    pub finished_at_ms: u64,
}

impl ExperimentRecord {
    pub fn is_done(&self) -> bool {
        self.status == CellStatus::Done
    }

    pub fn is_failed(&self) -> bool {
        matches!(self.status, CellStatus::Failed { .. })
    }

    pub fn is_skipped(&self) -> bool {
        matches!(self.status, CellStatus::Skipped { .. })
    }
}

/// A cell before execution; `skip` carries the constraint that rules it out.
#[derive(Clone, Debug, PartialEq)]
pub struct PlannedCell {
    pub key: CellKey,
    pub tier: Tier,
    pub original_dim: usize,
    pub skip: Option<String>,
    dataset_index: usize,
    detector_index: usize,
}

pub struct GridPlan {
    pub cells: Vec<PlannedCell>,
    pub datasets: Vec<Arc<TimeSeriesDataset>>,
}

/// Loads (or generates) every dataset and expands the grid. Cells that share
/// a key with an earlier one (e.g. half and a fixed tier resolving to the
/// same dimension) are dropped.
pub fn plan_grid(cfg: &ExperimentGridConfig) -> Result<GridPlan> {
    cfg.validate()?;
    let datasets: Vec<Arc<TimeSeriesDataset>> = (0..cfg.datasets.len())
        .map(|i| cfg.load_dataset(i).map(Arc::new))
        .collect::<Result<_>>()?;
    let mut names = HashSet::new();
    for ds in &datasets {
        if !names.insert(ds.manifest.name.clone()) {
            return Err(Error::Config(format!("duplicate dataset name {:?}", ds.manifest.name)));
        }
    }
    let mut seen = HashSet::new();
    let mut cells = Vec::new();
    for (di, ds) in datasets.iter().enumerate() {
        let n = ds.n_dims();
        for (mi, det) in cfg.detectors.iter().enumerate() {
            let model = det.kind();
            for &tier in &cfg.tiers {
                if det.tiers().is_some_and(|t| !t.contains(&tier)) {
                    continue;
                }
                let dim = tier.resolve(&ds.manifest);
                for &reducer in &cfg.reducers {
                    let original = tier == Tier::Original;
                    if original != (reducer == ReducerChoice::None) {
                        continue;
                    }
                    let skip = model.constraint(dim).or_else(|| match reducer {
                        ReducerChoice::None => None,
                        ReducerChoice::Technique(t) => cfg.reducer_spec(t, dim, 0).validate(n).err().map(|e| e.to_string()),
                    });
                    for &seed in &cfg.seeds {
                        let key = CellKey {
                            dataset: ds.manifest.name.clone(),
                            model,
                            reducer,
                            dim,
                            seed,
                        };
                        if !seen.insert(key.clone()) {
                            continue;
                        }
                        cells.push(PlannedCell {
                            key,
                            tier,
                            original_dim: n,
                            skip: skip.clone(),
                            dataset_index: di,
                            detector_index: mi,
                        });
                    }
                }
            }
        }
    }
    Ok(GridPlan { cells, datasets })
}

#[derive(Clone, Debug)]
pub struct GridOutcome {
    /// Current record of every planned cell, in plan order.
    pub records: Vec<ExperimentRecord>,
    /// Cells trained (or attempted) in this invocation.
    pub executed: usize,
    /// Cells taken from the store on resume.
    pub reused: usize,
}

impl GridOutcome {
    pub fn any_failed(&self) -> bool {
        self.records.iter().any(|r| r.is_failed())
    }
}

fn fnv1a(text: &str) -> u64 {
    text.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn millis(start: Instant) -> f64 {
    start.elapsed().as_millis() as f64 / 1000.0
}

/// Reduced datasets shared by the detectors of a grid row.
struct Reduced {
    data: Arc<TimeSeriesDataset>,
    secs: f64,
    trace: Option<Vec<f64>>,
}

type ReductionCache = Mutex<HashMap<(usize, Technique, usize, u64), Arc<OnceLock<std::result::Result<Arc<Reduced>, String>>>>>;

struct Context<'a> {
    cfg: &'a ExperimentGridConfig,
    datasets: &'a [Arc<TimeSeriesDataset>],
    cache: ReductionCache,
    out_dir: &'a Path,
}

impl Context<'_> {
    fn reduced(&self, cell: &PlannedCell, technique: Technique) -> std::result::Result<Arc<Reduced>, String> {
        let key = (cell.dataset_index, technique, cell.key.dim, cell.key.seed);
        let slot = self.cache.lock().unwrap().entry(key).or_default().clone();
        slot.get_or_init(|| {
            let ds = &self.datasets[cell.dataset_index];
            let tag = format!("reducer/{}/{}/{}", ds.manifest.name, technique.slug(), cell.key.dim);
            let spec = self
                .cfg
                .reducer_spec(technique, cell.key.dim, derive_seed(cell.key.seed, fnv1a(&tag)));
            let start = Instant::now();
            let (reduced, fitted) = reduce_dataset(ds, &spec).map_err(|e| e.to_string())?;
            let secs = millis(start);
            let data = match self.cfg.normalization {
                Normalization::None => reduced,
                kind => normalize(&reduced, kind).0,
            };
            Ok(Arc::new(Reduced {
                data: Arc::new(data),
                secs,
                trace: fitted.loss_trace().map(<[f64]>::to_vec),
            }))
        })
        .clone()
    }

    fn run_cell(&self, cell: &PlannedCell) -> ExperimentRecord {
        let mut record = ExperimentRecord {
            key: cell.key.clone(),
            tier: cell.tier,
            original_dim: cell.original_dim,
            status: CellStatus::Done,
            reduction_secs: 0.0,
            training_secs: 0.0,
            scoring_secs: 0.0,
            report: None,
            loss_trace: None,
            reducer_trace: None,
            compute_tag: self.cfg.compute_tag.clone(),
            finished_at_ms: 0,
        };
        if let Some(constraint) = &cell.skip {
            record.status = CellStatus::Skipped {
                constraint: constraint.clone(),
            };
        } else if let Err(reason) = self.execute(cell, &mut record) {
            record.status = CellStatus::Failed { reason };
            record.report = None;
        }
        record.finished_at_ms = now_ms();
        record
    }

    fn execute(&self, cell: &PlannedCell, record: &mut ExperimentRecord) -> std::result::Result<(), String> {
        let data = match cell.key.reducer {
            ReducerChoice::None => self.datasets[cell.dataset_index].clone(),
            ReducerChoice::Technique(t) => {
                let r = self.reduced(cell, t)?;
                record.reduction_secs = r.secs;
                if let Some(trace) = &r.trace {
                    let rel = Path::new(TRACE_DIR).join(format!("{}.reducer.csv", cell.key.slug()));
                    write_trace(&self.out_dir.join(&rel), &["iteration", "objective"], &[trace])
                        .map_err(|e| e.to_string())?;
                    record.reducer_trace = Some(rel);
                }
                r.data.clone()
            }
        };
        let tag = format!("detector/{}/{}", cell.key.dataset, cell.key.model.slug());
        let seed = derive_seed(cell.key.seed, fnv1a(&tag));
        let rel = Path::new(TRACE_DIR).join(format!("{}.loss.csv", cell.key.slug()));
        let scores = match &self.cfg.detectors[cell.detector_index] {
            DetectorEntry::Mutant { config, .. } => {
                let config = MutantConfig { seed, ..config.clone() };
                let start = Instant::now();
                let model = train_mutant(&data, &config).map_err(|e| e.to_string())?;
                record.training_secs = millis(start);
                write_trace(&self.out_dir.join(&rel), &["epoch", "loss"], &[&model.loss_trace])
                    .map_err(|e| e.to_string())?;
                let start = Instant::now();
                let scores = score_mutant(&model, &data).map_err(|e| e.to_string())?;
                record.scoring_secs = millis(start);
                scores
            }
            DetectorEntry::Transformer { config, .. } => {
                let config = TransformerConfig { seed, ..config.clone() };
                let start = Instant::now();
                let model = train_minimax(&data, &config).map_err(|e| e.to_string())?;
                record.training_secs = millis(start);
                write_trace(
                    &self.out_dir.join(&rel),
                    &["epoch", "reconstruction", "assdis"],
                    &[&model.loss_trace, &model.assdis_trace],
                )
                .map_err(|e| e.to_string())?;
                let start = Instant::now();
                let scores = score_series(&model, &data).map_err(|e| e.to_string())?;
                record.scoring_secs = millis(start);
                scores
            }
        };
        record.loss_trace = Some(rel);
        let report = evaluate(&scores, &data.labels, &self.cfg.threshold, self.cfg.point_adjust)
            .map_err(|e| e.to_string())?;
        record.report = Some(report);
        Ok(())
    }
}

/// CSV with a 1-based index column followed by one column per series.
fn write_trace(path: &Path, header: &[&str], series: &[&[f64]]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{}", header.join(","))?;
    let len = series.iter().map(|s| s.len()).min().unwrap_or(0);
    for i in 0..len {
        write!(w, "{}", i + 1)?;
        for s in series {
            write!(w, ",{}", s[i])?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Runs every pending cell with up to `jobs` concurrent workers, appending
/// each record to `<output_dir>/results.jsonl` as it completes.
///
/// With `cfg.resume`, cells whose latest stored record is done or skipped
/// are reused; failed cells run again. Without it the store starts empty.
pub fn run_grid(cfg: &ExperimentGridConfig, jobs: usize) -> Result<GridOutcome> {
    let plan = plan_grid(cfg)?;
    fs::create_dir_all(&cfg.output_dir)?;
    let store_path = cfg.output_dir.join(STORE_FILE);
    let previous: HashMap<CellKey, ExperimentRecord> = if cfg.resume && store_path.exists() {
        latest_by_cell(read_store(&store_path)?)
            .into_iter()
            .filter(|r| !r.is_failed())
            .map(|r| (r.key.clone(), r))
            .collect()
    } else {
        HashMap::new()
    };
    let appender = StoreAppender::open(&store_path, !cfg.resume)?;
    let ctx = Context {
        cfg,
        datasets: &plan.datasets,
        cache: Mutex::new(HashMap::new()),
        out_dir: &cfg.output_dir,
    };
    let pending: Vec<&PlannedCell> = plan.cells.iter().filter(|c| !previous.contains_key(&c.key)).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let fresh: Vec<ExperimentRecord> = pool.install(|| {
        pending
            .par_iter()
            .with_max_len(1)
            .map(|cell| {
                let record = ctx.run_cell(cell);
                appender.append(&record).map(|_| record)
            })
            .collect::<Result<_>>()
    })?;
    let executed = fresh.len();
    let mut by_key: HashMap<CellKey, ExperimentRecord> = previous;
    let reused = plan.cells.len() - executed;
    for r in fresh {
        by_key.insert(r.key.clone(), r);
    }
    let records = plan
        .cells
        .iter()
        .map(|c| by_key.remove(&c.key).expect("every planned cell has a record"))
        .collect();
    Ok(GridOutcome {
        records,
        executed,
        reused,
    })
}
