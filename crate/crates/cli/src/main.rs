use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use drtsad::dataset::{generate_synthetic, load_dataset_dir, validate_against_published, validate_manifest, write_dataset, SyntheticSpec};
use drtsad::runner::{latest_by_cell, read_store, run_grid, write_report, ExperimentGridConfig};

#[derive(Parser)]
#[command(name = "drtsad", version, about = "Dimensionality reduction + time series anomaly detection grid")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment grid and write its report.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Concurrent grid cells.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Keep finished cells from an existing store.
        #[arg(long)]
        resume: bool,
    },
    /// Render tables and the timing chart from a result store.
    Report {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a dataset directory against its manifest (and the published
    /// shape for MSL, SMAP and SWaT).
    Validate {
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Generate a synthetic dataset in the canonical layout.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(config: PathBuf, jobs: usize, resume: bool) -> Result<bool> {
    let mut cfg = ExperimentGridConfig::from_file(&config).with_context(|| format!("reading {}", config.display()))?;
    cfg.apply_env()?;
    cfg.resume |= resume;
    let outcome = run_grid(&cfg, jobs)?;
    let (mut done, mut failed, mut skipped) = (0, 0, 0);
    for r in &outcome.records {
        if r.is_done() {
            done += 1;
        } else if r.is_failed() {
            failed += 1;
            eprintln!("failed: {} {}", r.key.slug(), serde_json::to_string(&r.status)?);
        } else {
            skipped += 1;
        }
    }
    println!(
        "{} cells: {done} done, {failed} failed, {skipped} skipped ({} run, {} resumed)",
        outcome.records.len(),
        outcome.executed,
        outcome.reused
    );
    if done > 0 {
        let out = cfg.output_dir.join("report");
        write_report(&outcome.records, Some(&cfg.output_dir), &out)?;
        println!("report written to {}", out.display());
    }
    Ok(failed == 0)
}

fn report(store: PathBuf, out: PathBuf) -> Result<()> {
    let records = latest_by_cell(read_store(&store).with_context(|| format!("reading {}", store.display()))?);
    let root = store.parent().map(|p| p.to_path_buf());
    write_report(&records, root.as_deref(), &out)?;
    println!("{} records -> {}", records.len(), out.display());
    Ok(())
}

fn validate(dir: PathBuf) -> Result<bool> {
    let ds = load_dataset_dir(&dir).with_context(|| format!("loading {}", dir.display()))?;
    let mut ok = true;
    for report in std::iter::once(validate_manifest(&ds)).chain(validate_against_published(&ds)) {
        print!("{report}");
        ok &= report.passed();
    }
    println!("{}", if ok { "PASS" } else { "FAIL" });
    Ok(ok)
}

fn synth(spec: PathBuf, out: PathBuf) -> Result<()> {
    let text = std::fs::read_to_string(&spec).with_context(|| format!("reading {}", spec.display()))?;
    let spec: SyntheticSpec = serde_json::from_str(&text)?;
    let ds = generate_synthetic(&spec)?;
    write_dataset(&ds, &out)?;
    println!(
        "{}: {} train / {} test rows, {} dims, anomaly fraction {:.4} -> {}",
        ds.manifest.name,
        ds.train.rows(),
        ds.test.rows(),
        ds.n_dims(),
        ds.label_fraction(),
        out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, jobs, resume } => {
            if jobs == 0 {
                Err(anyhow::anyhow!("--jobs must be at least 1"))
            } else {
                run(config, jobs, resume)
            }
        }
        Command::Report { store, out } => report(store, out).map(|_| true),
        Command::Validate { dataset } => validate(dataset),
        Command::Synth { spec, out } => synth(spec, out).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
