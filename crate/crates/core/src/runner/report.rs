//! Results and timing tables rendered from stored records.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{latest_by_cell, CellStatus, ExperimentRecord, ModelKind, ReducerChoice, Tier};

const METRICS: [&str; 3] = ["precision", "recall", "f1"];

/// One line of `results_table.csv`. Per-seed rows mirror a record; rows with
/// `seed == "mean"` average the done seeds of a cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultsRow {
    pub model: String,
    pub tier: String,
    pub reducer: String,
    pub dataset: String,
    pub dim: usize,
    pub seed: String,
    pub status: String,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub tp: Option<usize>,
    pub fp: Option<usize>,
    #[serde(rename = "fn")]
    pub fn_: Option<usize>,
    pub tn: Option<usize>,
    pub threshold: Option<f64>,
    /// Metrics that are the best of their column within the model, joined
    /// by `;`.
    pub best: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResultsTable {
    pub markdown: String,
    pub csv: String,
    pub rows: Vec<ResultsRow>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct RowKey {
    model: ModelKind,
    tier_order: (u8, std::cmp::Reverse<usize>),
    tier: Tier,
    reducer: ReducerChoice,
}

impl RowKey {
    fn of(r: &ExperimentRecord) -> Self {
        Self {
            model: r.key.model,
            tier_order: r.tier.sort_key(),
            tier: r.tier,
            reducer: r.key.reducer,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum CellView {
    Metrics([f64; 3]),
    Failed(String),
    Skipped(String),
    Missing,
}

fn metrics_of(r: &ExperimentRecord) -> Option<[f64; 3]> {
    r.report.as_ref().map(|e| [e.precision, e.recall, e.f1])
}

/// Collapses the records of one cell (one per seed) into a displayed value.
fn view(records: &[&ExperimentRecord]) -> CellView {
    if records.is_empty() {
        return CellView::Missing;
    }
    if let Some(r) = records.iter().find(|r| r.is_failed()) {
        if let CellStatus::Failed { reason } = &r.status {
            return CellView::Failed(reason.clone());
        }
    }
    let done: Vec<[f64; 3]> = records.iter().filter_map(|r| metrics_of(r)).collect();
    if done.is_empty() {
        return match &records[0].status {
            CellStatus::Skipped { constraint } => CellView::Skipped(constraint.clone()),
            _ => CellView::Missing,
        };
    }
    let mut mean = [0.0; 3];
    for m in &done {
        for k in 0..3 {
            mean[k] += m[k];
        }
    }
    CellView::Metrics(mean.map(|v| v / done.len() as f64))
}

struct Grid<'a> {
    datasets: Vec<String>,
    seeds: Vec<u64>,
    cells: BTreeMap<RowKey, BTreeMap<&'a str, Vec<&'a ExperimentRecord>>>,
}

impl<'a> Grid<'a> {
    fn new(records: &'a [ExperimentRecord]) -> Self {
        let datasets: BTreeSet<String> = records.iter().map(|r| r.key.dataset.clone()).collect();
        let seeds: BTreeSet<u64> = records.iter().map(|r| r.key.seed).collect();
        let mut cells: BTreeMap<RowKey, BTreeMap<&str, Vec<&ExperimentRecord>>> = BTreeMap::new();
        for r in records {
            cells
                .entry(RowKey::of(r))
                .or_default()
                .entry(r.key.dataset.as_str())
                .or_default()
                .push(r);
        }
        for row in cells.values_mut() {
            for v in row.values_mut() {
                v.sort_by_key(|r| r.key.seed);
            }
        }
        Self {
            datasets: datasets.into_iter().collect(),
            seeds: seeds.into_iter().collect(),
            cells,
        }
    }

    /// Row views for one seed, or the mean over seeds when `seed` is `None`.
    /// Rows with nothing but skips are dropped.
    fn views(&self, seed: Option<u64>) -> Vec<(RowKey, Vec<CellView>)> {
        let mut out = Vec::new();
        for (key, row) in &self.cells {
            let views: Vec<CellView> = self
                .datasets
                .iter()
                .map(|d| {
                    let recs: Vec<&ExperimentRecord> = row
                        .get(d.as_str())
                        .map(|v| v.iter().copied().filter(|r| seed.is_none_or(|s| r.key.seed == s)).collect())
                        .unwrap_or_default();
                    view(&recs)
                })
                .collect();
            if views.iter().any(|v| matches!(v, CellView::Metrics(_) | CellView::Failed(_))) {
                out.push((*key, views));
            }
        }
        out
    }

    fn dims(&self, model: ModelKind, tier: Tier) -> Vec<String> {
        self.datasets
            .iter()
            .map(|d| {
                self.cells
                    .iter()
                    .filter(|(k, _)| k.model == model && k.tier == tier)
                    .find_map(|(_, row)| row.get(d.as_str()).and_then(|v| v.first()).map(|r| r.key.dim.to_string()))
                    .unwrap_or_else(|| "?".into())
            })
            .collect()
    }
}

/// `best[row][dataset][metric]`: the maximum of its column within the model.
fn best_flags(views: &[(RowKey, Vec<CellView>)], n_datasets: usize) -> Vec<Vec<[bool; 3]>> {
    let mut max: BTreeMap<ModelKind, Vec<[f64; 3]>> = BTreeMap::new();
    for (key, row) in views {
        let entry = max
            .entry(key.model)
            .or_insert_with(|| vec![[f64::NEG_INFINITY; 3]; n_datasets]);
        for (d, v) in row.iter().enumerate() {
            if let CellView::Metrics(m) = v {
                for k in 0..3 {
                    entry[d][k] = entry[d][k].max(m[k]);
                }
            }
        }
    }
    views
        .iter()
        .map(|(key, row)| {
            row.iter()
                .enumerate()
                .map(|(d, v)| match v {
                    CellView::Metrics(m) => std::array::from_fn(|k| m[k] == max[&key.model][d][k]),
                    _ => [false; 3],
                })
                .collect()
        })
        .collect()
}

fn tier_cell(grid: &Grid, key: &RowKey) -> String {
    let dims = grid.dims(key.model, key.tier).join(" - ");
    match key.tier {
        Tier::Original => "(Original)".into(),
        Tier::Half => format!("To Half Dim. {dims}"),
        Tier::Fixed(_) => dims,
    }
}

fn render_table(grid: &Grid, views: &[(RowKey, Vec<CellView>)], notes: &mut Vec<String>) -> String {
    let best = best_flags(views, grid.datasets.len());
    let mut s = String::from("| Model | # Dimensions Remaining | DR Layer (Technique) |");
    for d in &grid.datasets {
        write!(s, " {d} Precision | {d} Recall | {d} F1-score |").unwrap();
    }
    s.push_str("\n|---|---|---|");
    s.push_str(&"---:|".repeat(3 * grid.datasets.len()));
    s.push('\n');
    let mut prev: Option<RowKey> = None;
    for ((key, row), flags) in views.iter().zip(&best) {
        let model = if prev.is_none_or(|p| p.model != key.model) { key.model.label() } else { "" };
        let tier = if prev.is_none_or(|p| p.model != key.model || p.tier != key.tier) {
            tier_cell(grid, key)
        } else {
            String::new()
        };
        write!(s, "| {model} | {tier} | {} |", key.reducer.label()).unwrap();
        for (d, (v, f)) in row.iter().zip(flags).enumerate() {
            match v {
                CellView::Metrics(m) => {
                    for k in 0..3 {
                        if f[k] {
                            write!(s, " **{:.4}** |", m[k]).unwrap();
                        } else {
                            write!(s, " {:.4} |", m[k]).unwrap();
                        }
                    }
                }
                CellView::Failed(reason) | CellView::Skipped(reason) => {
                    let kind = if matches!(v, CellView::Failed(_)) { "failed" } else { "skipped" };
                    let text = format!(
                        "{} / {} / {} / {}: {kind}: {reason}",
                        key.model.label(),
                        grid.datasets[d],
                        key.reducer.label(),
                        tier_cell(grid, key)
                    );
                    let n = match notes.iter().position(|t| *t == text) {
                        Some(i) => i + 1,
                        None => {
                            notes.push(text);
                            notes.len()
                        }
                    };
                    let mark = if kind == "failed" { "—" } else { "n/a" };
                    for _ in 0..3 {
                        write!(s, " {mark}[^{n}] |").unwrap();
                    }
                }
                CellView::Missing => s.push_str(" | | |"),
            }
        }
        s.push('\n');
        prev = Some(*key);
    }
    s
}

fn csv_row(r: &ExperimentRecord, best: &str) -> ResultsRow {
    let status = match r.status {
        CellStatus::Done => "done",
        CellStatus::Failed { .. } => "failed",
        CellStatus::Skipped { .. } => "skipped",
    };
    let rep = r.report.as_ref();
    ResultsRow {
        model: r.key.model.slug().into(),
        tier: r.tier.to_string(),
        reducer: r.key.reducer.slug().into(),
        dataset: r.key.dataset.clone(),
        dim: r.key.dim,
        seed: r.key.seed.to_string(),
        status: status.into(),
        precision: rep.map(|e| e.precision),
        recall: rep.map(|e| e.recall),
        f1: rep.map(|e| e.f1),
        tp: rep.map(|e| e.counts.tp),
        fp: rep.map(|e| e.counts.fp),
        fn_: rep.map(|e| e.counts.fn_),
        tn: rep.map(|e| e.counts.tn),
        threshold: rep.map(|e| e.threshold),
        best: best.into(),
    }
}

fn best_label(flags: &[bool; 3]) -> String {
    METRICS
        .iter()
        .zip(flags)
        .filter(|(_, &f)| f)
        .map(|(m, _)| *m)
        .collect::<Vec<_>>()
        .join(";")
}

/// Renders the precision/recall/F1 grid grouped by model, tier and reducer,
/// with one column triple per dataset. Wall times are not part of either
/// output, so reruns with the same seeds give identical bytes.
pub fn emit_results_table(records: &[ExperimentRecord]) -> Result<ResultsTable> {
    let records = latest_by_cell(records.to_vec());
    if !records.iter().any(|r| r.is_done()) {
        return Err(Error::EmptyInput);
    }
    let grid = Grid::new(&records);
    let multi = grid.seeds.len() > 1;
    let views = grid.views(None);
    let flags = best_flags(&views, grid.datasets.len());

    let mut md = String::from("# Detection results\n\n");
    let policies: BTreeSet<String> = records
        .iter()
        .filter_map(|r| r.report.as_ref())
        .map(|e| {
            format!(
                "{}, point adjustment {}{}",
                e.policy.describe(),
                if e.point_adjust { "on" } else { "off" },
                if e.oracle_informed { ", threshold chosen with test labels" } else { "" }
            )
        })
        .collect();
    for p in &policies {
        writeln!(md, "Threshold policy: {p}.").unwrap();
    }
    if multi {
        let seeds: Vec<String> = grid.seeds.iter().map(u64::to_string).collect();
        writeln!(md, "\nMean over seeds {}.", seeds.join(", ")).unwrap();
    }
    md.push('\n');
    let mut notes = Vec::new();
    md.push_str(&render_table(&grid, &views, &mut notes));
    if multi {
        for &seed in &grid.seeds {
            writeln!(md, "\n## Seed {seed}\n").unwrap();
            md.push_str(&render_table(&grid, &grid.views(Some(seed)), &mut notes));
        }
    }
    if !notes.is_empty() {
        md.push('\n');
        for (i, n) in notes.iter().enumerate() {
            writeln!(md, "[^{}]: {n}", i + 1).unwrap();
        }
    }
    let hidden: BTreeSet<(ModelKind, ReducerChoice, usize, String)> = records
        .iter()
        .filter_map(|r| match &r.status {
            CellStatus::Skipped { constraint } => Some((r.key.model, r.key.reducer, r.key.dim, constraint.clone())),
            _ => None,
        })
        .collect();
    if !hidden.is_empty() {
        md.push_str("\n## Skipped cells\n\n");
        for (model, reducer, dim, why) in hidden {
            writeln!(md, "- {} / {} / {dim}: {why}", model.label(), reducer.label()).unwrap();
        }
    }

    let flag_of = |key: &RowKey, dataset: &str| -> String {
        let d = grid.datasets.iter().position(|x| x == dataset).unwrap();
        views
            .iter()
            .position(|(k, _)| k == key)
            .map(|i| best_label(&flags[i][d]))
            .unwrap_or_default()
    };
    let mut rows = Vec::new();
    for (key, row) in &grid.cells {
        for (dataset, recs) in row {
            for r in recs {
                let best = if multi { String::new() } else { flag_of(key, dataset) };
                rows.push(csv_row(r, &best));
            }
            if multi {
                if let CellView::Metrics(m) = view(recs) {
                    rows.push(ResultsRow {
                        seed: "mean".into(),
                        status: "done".into(),
                        precision: Some(m[0]),
                        recall: Some(m[1]),
                        f1: Some(m[2]),
                        tp: None,
                        fp: None,
                        fn_: None,
                        tn: None,
                        threshold: None,
                        best: flag_of(key, dataset),
                        ..csv_row(recs[0], "")
                    });
                }
            }
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        w.serialize(r).map_err(|e| Error::Config(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    let csv = String::from_utf8(bytes).expect("csv output is UTF-8");
    Ok(ResultsTable { markdown: md, csv, rows })
}

pub fn parse_results_csv(text: &str) -> Result<Vec<ResultsRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e| Error::Parse {
                file: "results_table.csv".into(),
                row: i + 2,
                col: 0,
                message: e.to_string(),
            })
        })
        .collect()
}

/// `(t_original / t_reduced − 1) · 100`.
pub fn reduction_percent(t_original: f64, t_reduced: f64) -> f64 {
    (t_original / t_reduced - 1.0) * 100.0
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimingRow {
    pub model: ModelKind,
    pub dataset: String,
    pub tier: Tier,
    pub dim: usize,
    pub compute_tag: String,
    /// Mean training time over the done cells of this row.
    pub seconds: f64,
    pub cells: usize,
    /// `t_original / t_row` when the original tier was timed.
    pub ratio: Option<f64>,
}

impl TimingRow {
    pub fn hours(&self) -> f64 {
        self.seconds / 3600.0
    }
}

/// Mean speed-up of one tier over all (model, dataset) pairs that have both
/// it and the original tier.
#[derive(Clone, Debug, PartialEq)]
pub struct TimingAggregate {
    pub tier: Tier,
    pub ratio: f64,
    pub percent: f64,
    pub pairs: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimingOutputs {
    pub rows: Vec<TimingRow>,
    pub aggregates: Vec<TimingAggregate>,
    pub markdown: String,
    pub svg: String,
}

fn fmt_hours(h: f64) -> String {
    if h >= 0.01 {
        format!("{h:.2}")
    } else {
        format!("{h:.2e}")
    }
}

fn tier_text(row: &TimingRow) -> String {
    match row.tier {
        Tier::Original => "Original".into(),
        _ => row.dim.to_string(),
    }
}

/// Training-time table (model, dataset, dimensionality, compute tag, hours),
/// the per-tier speed-up aggregates, and a grouped bar chart.
pub fn emit_timing_outputs(records: &[ExperimentRecord]) -> Result<TimingOutputs> {
    let records = latest_by_cell(records.to_vec());
    let mut groups: BTreeMap<(ModelKind, String, (u8, std::cmp::Reverse<usize>), Tier), Vec<&ExperimentRecord>> =
        BTreeMap::new();
    for r in records.iter().filter(|r| r.is_done()) {
        groups
            .entry((r.key.model, r.key.dataset.clone(), r.tier.sort_key(), r.tier))
            .or_default()
            .push(r);
    }
    if groups.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut rows: Vec<TimingRow> = groups
        .iter()
        .map(|((model, dataset, _, tier), recs)| TimingRow {
            model: *model,
            dataset: dataset.clone(),
            tier: *tier,
            dim: recs[0].key.dim,
            compute_tag: recs[0].compute_tag.clone(),
            seconds: recs.iter().map(|r| r.training_secs).sum::<f64>() / recs.len() as f64,
            cells: recs.len(),
            ratio: None,
        })
        .collect();
    let originals: BTreeMap<(ModelKind, String), f64> = rows
        .iter()
        .filter(|r| r.tier == Tier::Original)
        .map(|r| ((r.model, r.dataset.clone()), r.seconds))
        .collect();
    for r in &mut rows {
        if let Some(&t0) = originals.get(&(r.model, r.dataset.clone())) {
            if r.seconds > 0.0 {
                r.ratio = Some(t0 / r.seconds);
            }
        }
    }
    let mut by_tier: BTreeMap<((u8, std::cmp::Reverse<usize>), Tier), Vec<f64>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.tier != Tier::Original) {
        if let Some(x) = r.ratio {
            by_tier.entry((r.tier.sort_key(), r.tier)).or_default().push(x);
        }
    }
    let aggregates: Vec<TimingAggregate> = by_tier
        .into_iter()
        .map(|((_, tier), v)| {
            let ratio = v.iter().sum::<f64>() / v.len() as f64;
            TimingAggregate {
                tier,
                ratio,
                percent: (ratio - 1.0) * 100.0,
                pairs: v.len(),
            }
        })
        .collect();

    let mut md = String::from("# Training time\n\n");
    md.push_str("| Model | Dataset | Dimensionality | CPU/GPU | Usage Time (Hours) | Seconds | t_orig / t | Reduction (%) |\n");
    md.push_str("|---|---|---|---|---:|---:|---:|---:|\n");
    for r in &rows {
        let (ratio, pct) = match (r.tier, r.ratio) {
            (Tier::Original, _) | (_, None) => (String::new(), String::new()),
            (_, Some(x)) => (format!("{x:.2}"), format!("{:.0}", (x - 1.0) * 100.0)),
        };
        writeln!(
            md,
            "| {} | {} | {} | {} | {} | {:.3} | {ratio} | {pct} |",
            r.model.label(),
            r.dataset,
            tier_text(r),
            r.compute_tag,
            fmt_hours(r.hours()),
            r.seconds
        )
        .unwrap();
    }
    if !aggregates.is_empty() {
        md.push_str("\nReduction is `(t_orig / t_reduced - 1) * 100`.\n\n");
        for a in &aggregates {
            writeln!(
                md,
                "- {}: mean ratio {:.2}x, {:.0}% reduction over {} model/dataset pair(s)",
                aggregate_label(a.tier),
                a.ratio,
                a.percent,
                a.pairs
            )
            .unwrap();
        }
    }
    let svg = render_svg(&rows, &aggregates);
    Ok(TimingOutputs {
        rows,
        aggregates,
        markdown: md,
        svg,
    })
}

fn aggregate_label(tier: Tier) -> String {
    match tier {
        Tier::Original => "original".into(),
        Tier::Half => "half dimensions".into(),
        Tier::Fixed(m) => format!("{m} dimensions"),
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

const PALETTE: [&str; 6] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"];

fn render_svg(rows: &[TimingRow], aggregates: &[TimingAggregate]) -> String {
    let (bar, gap, group_gap, left, top, plot_h) = (28.0, 6.0, 36.0, 70.0, 40.0, 240.0);
    let use_hours = rows.iter().any(|r| r.hours() >= 0.1);
    let value = |r: &TimingRow| if use_hours { r.hours() } else { r.seconds };
    let max = rows.iter().map(value).fold(0.0f64, f64::max).max(1e-9);
    let mut groups: Vec<(String, Vec<&TimingRow>)> = Vec::new();
    for r in rows {
        let label = format!("{} / {}", r.model.label(), r.dataset);
        match groups.last_mut() {
            Some((l, v)) if *l == label => v.push(r),
            _ => groups.push((label, vec![r])),
        }
    }
    let tiers: Vec<Tier> = rows.iter().map(|r| r.tier).collect::<BTreeSet<_>>().into_iter().collect();
    let plot_w: f64 = groups
        .iter()
        .map(|(_, v)| v.len() as f64 * (bar + gap) - gap + group_gap)
        .sum::<f64>()
        .max(120.0);
    let width = left + plot_w + 20.0;
    let bottom = top + plot_h;
    let height = bottom + 70.0 + 16.0 * aggregates.len() as f64;
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" font-family="sans-serif" font-size="11">"#
    )
    .unwrap();
    writeln!(s, r#"<text x="{left}" y="20" font-size="14">Training time ({})</text>"#, if use_hours { "hours" } else { "seconds" }).unwrap();
    for k in 0..=4 {
        let v = max * k as f64 / 4.0;
        let y = bottom - plot_h * k as f64 / 4.0;
        writeln!(
            s,
            r##"<line x1="{left}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"##,
            left + plot_w,
            left - 6.0,
            y + 4.0,
            format_axis(v)
        )
        .unwrap();
    }
    let mut x = left + group_gap / 2.0;
    for (label, members) in &groups {
        let start = x;
        for r in members {
            let h = plot_h * value(r) / max;
            let color = PALETTE[tiers.iter().position(|t| *t == r.tier).unwrap_or(0) % PALETTE.len()];
            writeln!(
                s,
                r#"<rect x="{x:.1}" y="{:.1}" width="{bar}" height="{h:.1}" fill="{color}"/>"#,
                bottom - h
            )
            .unwrap();
            writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="9">{}</text>"#,
                x + bar / 2.0,
                bottom - h - 3.0,
                format_axis(value(r))
            )
            .unwrap();
            writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                x + bar / 2.0,
                bottom + 14.0,
                tier_text(r)
            )
            .unwrap();
            x += bar + gap;
        }
        writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            (start + x - gap) / 2.0,
            bottom + 32.0,
            xml_escape(label)
        )
        .unwrap();
        x += group_gap - gap;
    }
    writeln!(
        s,
        r##"<line x1="{left}" y1="{bottom}" x2="{:.1}" y2="{bottom}" stroke="#333"/>"##,
        left + plot_w
    )
    .unwrap();
    for (i, a) in aggregates.iter().enumerate() {
        writeln!(
            s,
            r#"<text x="{left}" y="{:.1}">{}: {:.2}x faster ({:.0}% reduction)</text>"#,
            bottom + 56.0 + 16.0 * i as f64,
            aggregate_label(a.tier),
            a.ratio,
            a.percent
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

fn format_axis(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v >= 100.0 {
        format!("{v:.0}")
    } else if v >= 1.0 {
        format!("{v:.2}")
    } else {
        format!("{v:.3}")
    }
}

/// Writes `results_table.md/.csv`, `timing_table.md` and `timing.svg` to
/// `out`, and copies the loss traces referenced by the records from
/// `trace_root` into `out/traces`.
pub fn write_report(records: &[ExperimentRecord], trace_root: Option<&Path>, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    let table = emit_results_table(records)?;
    fs::write(out.join("results_table.md"), &table.markdown)?;
    fs::write(out.join("results_table.csv"), &table.csv)?;
    let timing = emit_timing_outputs(records)?;
    fs::write(out.join("timing_table.md"), &timing.markdown)?;
    fs::write(out.join("timing.svg"), &timing.svg)?;
    if let Some(root) = trace_root {
        for r in records {
            for rel in [&r.loss_trace, &r.reducer_trace].into_iter().flatten() {
                let src = root.join(rel);
                if src.is_file() {
                    let dst = out.join(rel);
                    if let Some(dir) = dst.parent() {
                        fs::create_dir_all(dir)?;
                    }
                    fs::copy(&src, &dst)?;
                }
            }
        }
    }
    Ok(())
}
