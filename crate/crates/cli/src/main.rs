//! `uaware`: generate synthetic data, train, report confidence, and run
//! nested cross-validation from the shell.
//!
//! Exit status is 0 on success, 1 for invalid input or configuration and 2
//! for numerical failures (divergence, gradient mismatch).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use uaware_core::data::{read_dataset, write_dataset, BoundaryJitter};
use uaware_core::harness::{
    balanced_accuracy, compare_models, nested_cv, predict_labels, run_gradcheck_suite, train, RunConfig,
};
use uaware_core::model::{read_checkpoint, write_checkpoint, Checkpoint};
use uaware_core::rng::{derive_seed, tag};
use uaware_core::uncertainty::{banded_report, estimate_aleatoric, estimate_epistemic};
use uaware_core::{
    BandedReport, ConfidenceResult, Dataset, Grid, HarnessError, SegSequence, TrainMode, UncertaintyKind,
};

#[derive(Parser)]
#[command(name = "uaware", version, about = "Uncertainty-aware VAE classifier toolkit")]
struct Cli {
    /// Run configuration (TOML with optional [gen], [train], [grid], [eval] sections).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for every random stream; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset file.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n_subjects: Option<usize>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        height: Option<usize>,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        responder_fraction: Option<f64>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        mode_spread: Option<f64>,
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Train one model on a whole dataset and write a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Per-epoch loss terms as JSON lines.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Predict and report confidence bands for a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = UncertaintyArg::Both)]
        uncertainty: UncertaintyArg,
        /// Per-subject results and reports as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Nested cross-validation with grid search.
    Cv {
        #[arg(long)]
        data: PathBuf,
        /// Grid file (TOML with beta, gamma, alpha, margin, clf_hidden lists).
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Baseline and uncertainty-aware nested cross-validation on the same folds.
    Compare {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare analytic gradients with central differences.
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        instances: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Baseline,
    Ua,
}

impl From<ModeArg> for TrainMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Baseline => TrainMode::Baseline,
            ModeArg::Ua => TrainMode::UncertaintyAware,
        }
    }
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum UncertaintyArg {
    Epistemic,
    Aleatoric,
    Both,
}

enum Failure {
    Invalid(String),
    Numerical(String),
}

impl Failure {
    fn context(self, path: &Path) -> Self {
        match self {
            Failure::Invalid(m) => Failure::Invalid(format!("{}: {m}", path.display())),
            Failure::Numerical(m) => Failure::Numerical(format!("{}: {m}", path.display())),
        }
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.to_string())
        } else {
            Failure::Invalid(e.to_string())
        }
    }
}

macro_rules! invalid_from {
    ($($t:ty),*) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                HarnessError::from(e).into()
            }
        }
    )*};
}
invalid_from!(
    uaware_core::data::DataError,
    uaware_core::model::ModelError,
    uaware_core::uncertainty::UncertaintyError
);

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Invalid(format!("{}: {e}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let file = File::create(path).map_err(|e| io_failure(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| io_failure(path, e))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| io_failure(path, e))
}

fn load_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    Ok(match cli.seed {
        Some(seed) => cfg.with_seed(seed),
        None => cfg,
    })
}

fn load_grid(path: Option<&PathBuf>, fallback: Grid) -> Result<Grid, Failure> {
    match path {
        Some(path) => Ok(Grid::load(path)?),
        None => Ok(fallback),
    }
}

fn load_dataset(path: &Path) -> Result<Dataset, Failure> {
    read_dataset(path).map_err(|e| Failure::from(e).context(path))
}

fn records(ds: &Dataset) -> Vec<&SegSequence> {
    ds.subjects.iter().collect()
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    balanced_accuracy: Option<f64>,
    reports: Vec<BandedReport>,
    results: &'a [ConfidenceResult],
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::GenData {
            out,
            n_subjects,
            frames,
            height,
            width,
            responder_fraction,
            threshold,
            mode_spread,
            noise,
        } => {
            let g = &mut cfg.gen;
            g.n_subjects = n_subjects.unwrap_or(g.n_subjects);
            g.n_frames = frames.unwrap_or(g.n_frames);
            g.height = height.unwrap_or(g.height);
            g.width = width.unwrap_or(g.width);
            g.responder_fraction = responder_fraction.unwrap_or(g.responder_fraction);
            g.threshold = threshold.unwrap_or(g.threshold);
            g.mode_spread = mode_spread.unwrap_or(g.mode_spread);
            g.noise = noise.unwrap_or(g.noise);
            let ds = uaware_core::data::generate_dataset(g)?;
            write_dataset(&ds, &out)?;
            println!(
                "wrote {} subjects ({} responders) to {}",
                ds.len(),
                ds.positives(),
                out.display()
            );
        }
        Command::Train {
            data,
            out,
            mode,
            epochs,
            trace,
        } => {
            let ds = load_dataset(&data)?;
            let tc = &mut cfg.train;
            if let Some(m) = mode {
                tc.mode = m.into();
            }
            tc.epochs = epochs.unwrap_or(tc.epochs);
            let recs = records(&ds);
            let result = train(&recs, ds.dims, tc)?;
            write_checkpoint(
                &Checkpoint {
                    params: result.params.clone(),
                    seed: tc.seed,
                    epoch: tc.epochs,
                },
                &out,
            )?;
            if let Some(path) = trace {
                let file = File::create(&path).map_err(|e| io_failure(&path, e))?;
                let mut w = BufWriter::new(file);
                for e in &result.trace {
                    let line = serde_json::to_string(e).map_err(|e| io_failure(&path, e))?;
                    writeln!(w, "{line}").map_err(|e| io_failure(&path, e))?;
                }
                w.flush().map_err(|e| io_failure(&path, e))?;
            }
            if let Some(last) = result.trace.last() {
                let terms: Vec<String> = last.loss.terms().iter().map(|(n, v)| format!("{n} {v:.6}")).collect();
                println!("epoch {}: {}", last.epoch, terms.join("  "));
            }
            let labels: Vec<bool> = recs.iter().map(|r| r.label).collect();
            if let Ok(ba) = balanced_accuracy(&predict_labels(&result.params, &recs)?, &labels) {
                println!("training balanced accuracy {ba:.4}");
            }
            println!("wrote checkpoint to {}", out.display());
        }
        Command::Eval {
            checkpoint,
            data,
            uncertainty,
            out,
        } => {
            let ckpt = read_checkpoint(&checkpoint).map_err(|e| Failure::from(e).context(&checkpoint))?;
            let ds = load_dataset(&data)?;
            let params = &ckpt.params;
            let recs = records(&ds);
            let labels: Vec<bool> = recs.iter().map(|r| r.label).collect();
            let ba = balanced_accuracy(&predict_labels(params, &recs)?, &labels).ok();
            let seed = cfg.train.seed;
            let n = cfg.eval.n_samples;
            let jitter = BoundaryJitter::new(cfg.eval.jitter)
                .ok_or_else(|| Failure::Invalid(format!("jitter {} outside [0, 1]", cfg.eval.jitter)))?;
            let mut results = Vec::new();
            let mut reports = Vec::new();
            for kind in [UncertaintyKind::Epistemic, UncertaintyKind::Aleatoric] {
                let wanted = match kind {
                    UncertaintyKind::Epistemic => uncertainty != UncertaintyArg::Aleatoric,
                    UncertaintyKind::Aleatoric => uncertainty != UncertaintyArg::Epistemic,
                };
                if !wanted {
                    continue;
                }
                let start = results.len();
                for (i, r) in recs.iter().enumerate() {
                    results.push(match kind {
                        UncertaintyKind::Epistemic => {
                            estimate_epistemic(params, r, n, derive_seed(seed, &[tag::EPISTEMIC, i as u64]))?
                        }
                        UncertaintyKind::Aleatoric => estimate_aleatoric(
                            params,
                            r,
                            &jitter,
                            n,
                            derive_seed(seed, &[tag::ALEATORIC, i as u64]),
                        )?,
                    });
                }
                reports.push(banded_report(&results[start..], kind)?);
            }
            match ba {
                Some(v) => println!("balanced accuracy {v:.4}"),
                None => println!("balanced accuracy undefined (single-class labels)"),
            }
            for r in &reports {
                print!("{}", r.render_table());
            }
            if let Some(path) = out {
                write_json(
                    &path,
                    &EvalOutput {
                        balanced_accuracy: ba,
                        reports,
                        results: &results,
                    },
                )?;
            }
        }
        Command::Cv {
            data,
            grid,
            mode,
            epochs,
            out,
        } => {
            let ds = load_dataset(&data)?;
            let grid = load_grid(grid.as_ref(), cfg.grid.clone())?;
            if let Some(m) = mode {
                cfg.train.mode = m.into();
            }
            cfg.train.epochs = epochs.unwrap_or(cfg.train.epochs);
            let result = nested_cv(&ds, &grid, &cfg.cv_config())?;
            result.check_no_leakage()?;
            print!("{}", result.render());
            if let Some(path) = out {
                write_json(&path, &result)?;
            }
        }
        Command::Compare {
            data,
            grid,
            epochs,
            out,
        } => {
            let ds = load_dataset(&data)?;
            let grid = load_grid(grid.as_ref(), cfg.grid.clone())?;
            cfg.train.epochs = epochs.unwrap_or(cfg.train.epochs);
            let cmp = compare_models(&ds, &grid, &cfg.compare_config())?;
            cmp.baseline.check_no_leakage()?;
            cmp.uncertainty_aware.check_no_leakage()?;
            print!("{}", cmp.render());
            if let Some(path) = out {
                write_json(&path, &cmp)?;
            }
        }
        Command::Gradcheck { instances } => {
            let report = run_gradcheck_suite(instances, cfg.train.seed)?;
            print!("{}", report.render());
            println!(
                "max relative error {:.3e} ({})",
                report.max_error(),
                if report.passed() { "within tolerance" } else { "tolerance exceeded" }
            );
            if !report.passed_above_rounding() {
                return Err(Failure::Numerical(
                    "analytic gradients disagree with central differences".into(),
                ));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(2)
        }
    }
}
