//! The `train`, `compare`, `gradcheck` and `eval` commands behind the
//! `pcn-ta` binary. Each returns a summary on success or a [`CommandError`]
//! carrying the process exit code.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use crate::checkpoint;
use crate::config::RunConfig;
use crate::data::FrameStream;
use crate::engine;
use crate::error::Error;
use crate::experiment::{self, RunOutcome, RunSetup, RunSpec};
use crate::gradcheck::{self, Fault, Report};
use crate::metrics::{self, EpochRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Success = 0,
    Config = 1,
    Data = 2,
    Check = 3,
}

#[derive(Debug)]
pub struct CommandError {
    pub code: ExitCode,
    pub message: String,
}

impl fmt::Display for CommandError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CommandError {}

impl From<Error> for CommandError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::Build { .. } | Error::Dimension { .. } => ExitCode::Config,
            _ => ExitCode::Data,
        };
        CommandError {
            code,
            message: e.to_string(),
        }
    }
}

pub type CommandResult<T> = std::result::Result<T, CommandError>;

fn num_classes(train: &FrameStream, test: &FrameStream) -> usize {
    train.frames.iter().chain(&test.frames).map(|f| f.label + 1).max().unwrap_or(0)
}

fn input_shape(train: &FrameStream) -> CommandResult<Vec<usize>> {
    train
        .frames
        .first()
        .map(|f| f.image.shape().to_vec())
        .ok_or_else(|| Error::Empty("training stream").into())
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub records: Vec<EpochRecord>,
    pub csv: PathBuf,
    pub checkpoint: PathBuf,
    pub config_echo: PathBuf,
}

/// Trains `cfg.method` and writes the per-epoch CSV, a checkpoint with the
/// last hidden-state snapshot, and the resolved config.
pub fn cmd_train(cfg: &RunConfig) -> CommandResult<TrainSummary> {
    cfg.validate()?;
    let (train, test) = cfg.load_data()?;
    let classes = num_classes(&train, &test);
    let arch = cfg.architecture(&input_shape(&train)?, classes);
    let spec = RunSpec {
        method: cfg.method,
        inference_iters: cfg.train.max_inference_iters,
    };
    let setup = RunSetup {
        arch: &arch,
        seed: cfg.seed,
        cfg: &cfg.train,
        train: &train,
        test: &test,
        num_classes: classes,
        epochs: cfg.epochs,
        run_id: &cfg.run_id,
    };
    let out = experiment::run(&setup, &spec)?;
    let config_echo = cfg.write_echo()?;
    let csv = cfg.out_dir.join(metrics::csv_file_name(&cfg.run_id, cfg.method));
    metrics::write_csv(&out.records, &csv)?;
    let checkpoint = cfg.out_dir.join(format!("{}_{}.ckpt", cfg.run_id, cfg.method));
    checkpoint::save(&checkpoint, &out.graph, out.last_snapshot.as_ref())?;
    Ok(TrainSummary {
        records: out.records,
        csv,
        checkpoint,
        config_echo,
    })
}

#[derive(Debug, Clone)]
pub struct CompareSummary {
    pub merged: Vec<EpochRecord>,
    pub merged_csv: PathBuf,
    pub run_csvs: Vec<PathBuf>,
    pub initial_fingerprint: u64,
}

/// Runs the four comparison configurations from one initialization and
/// writes one CSV per run plus `<run_id>_merged.csv`.
pub fn cmd_compare(cfg: &RunConfig) -> CommandResult<CompareSummary> {
    cfg.validate()?;
    let (train, test) = cfg.load_data()?;
    let classes = num_classes(&train, &test);
    let arch = cfg.architecture(&input_shape(&train)?, classes);
    let setup = RunSetup {
        arch: &arch,
        seed: cfg.seed,
        cfg: &cfg.train,
        train: &train,
        test: &test,
        num_classes: classes,
        epochs: cfg.epochs,
        run_id: &cfg.run_id,
    };
    let outcomes = experiment::compare(&setup, &RunSpec::comparison_set())?;
    let initial_fingerprint = shared_fingerprint(&outcomes)?;
    cfg.write_echo()?;
    let mut run_csvs = Vec::new();
    for o in &outcomes {
        let path = cfg.out_dir.join(metrics::csv_file_name(&o.run_id, o.spec.method));
        metrics::write_csv(&o.records, &path)?;
        run_csvs.push(path);
    }
    let merged = metrics::merge(outcomes.into_iter().map(|o| o.records));
    let merged_csv = cfg.out_dir.join(format!("{}_merged.csv", cfg.run_id));
    metrics::write_csv(&merged, &merged_csv)?;
    Ok(CompareSummary {
        merged,
        merged_csv,
        run_csvs,
        initial_fingerprint,
    })
}

fn shared_fingerprint(outcomes: &[RunOutcome]) -> CommandResult<u64> {
    let first = outcomes.first().map(|o| o.initial_fingerprint).unwrap_or(0);
    match outcomes.iter().find(|o| o.initial_fingerprint != first) {
        None => Ok(first),
        Some(o) => Err(CommandError {
            code: ExitCode::Check,
            message: format!("run {} started from different parameters", o.run_id),
        }),
    }
}

/// Finite-difference suite and equivalence fixtures. Fails with
/// [`ExitCode::Check`] listing every row over tolerance.
pub fn cmd_gradcheck(seed: u64, fault: Fault) -> CommandResult<Report> {
    let report = gradcheck::full_report(seed, fault)?;
    if report.passed() {
        Ok(report)
    } else {
        let names: Vec<String> = report
            .failures()
            .map(|r| format!("{} ({:.3e} > {:.1e})", r.name, r.value, r.tolerance))
            .collect();
        Err(CommandError {
            code: ExitCode::Check,
            message: format!("{}\ngradcheck failed: {}", report.table(), names.join(", ")),
        })
    }
}

/// Accuracy of a saved graph on the configured test split, or on the
/// training stream when the split is empty.
pub fn cmd_eval(checkpoint_path: &Path, cfg: &RunConfig) -> CommandResult<f64> {
    let bytes = fs::read(checkpoint_path).map_err(|e| Error::io(checkpoint_path, e))?;
    let (g, _) = checkpoint::decode(&bytes)?;
    let (train, test) = cfg.load_data()?;
    let frames = if test.is_empty() { &train.frames } else { &test.frames };
    Ok(engine::evaluate(&g, frames)?)
}
