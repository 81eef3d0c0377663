//! End-to-end runner: data, splits, training, and artifacts on disk.
//!
//! An output directory receives:
//!
//! * `metrics.csv`: one row per evaluated epoch
//! * `config.toml`: the fully resolved configuration
//! * `summary.toml`: best accuracy, epoch and time to best, totals

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::config::{ExperimentKind, RunConfig};
use crate::error::SnnError;
use crate::metrics::{emit_metrics, RunSummary};
use crate::mnist::{build_splits, load_training_set, IdxError, InsufficientSamples};
use crate::pipeline::{train_bp_only, train_proposed, train_self_training, EpochMetrics, ExperimentData, TrainOutcome};
use crate::seed::derive_seed;

/// Environment variable naming the MNIST directory.
pub const DATA_DIR_ENV: &str = "MNIST_DATA_DIR";

#[derive(Debug, Error)]
pub enum RunError {
    #[error("no MNIST directory: set {DATA_DIR_ENV}, pass --data-dir, or set data_dir in the config")]
    NoDataDir,
    #[error(transparent)]
    Data(#[from] IdxError),
    #[error(transparent)]
    Split(#[from] InsufficientSamples),
    #[error(transparent)]
    Simulation(#[from] SnnError),
    #[error("training produced no metrics")]
    Empty,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

pub struct RunArtifacts {
    pub outcome: TrainOutcome,
    pub summary: RunSummary,
    pub metrics_csv: String,
}

pub fn prepare_data(cfg: &RunConfig, data_dir: &Path) -> Result<ExperimentData, RunError> {
    let dataset = load_training_set(data_dir)?;
    let splits = build_splits(&dataset.labels, &cfg.split, derive_seed(cfg.seed, "splits", 0, 0))?;
    Ok(ExperimentData::from_splits(&dataset, &splits, cfg.network.f_max))
}

pub fn train(
    cfg: &RunConfig,
    data: &ExperimentData,
    on_epoch: &mut dyn FnMut(&EpochMetrics),
) -> Result<RunArtifacts, RunError> {
    let outcome = match cfg.kind {
        ExperimentKind::Proposed => train_proposed(cfg, data, on_epoch)?,
        ExperimentKind::BpOnly => train_bp_only(cfg, data, on_epoch)?,
        ExperimentKind::SelfTraining => train_self_training(cfg, data, on_epoch)?,
    };
    let summary = RunSummary::from_outcome(&cfg.kind.to_string(), cfg.seed, &outcome).ok_or(RunError::Empty)?;
    let metrics_csv = emit_metrics(&outcome.metrics);
    Ok(RunArtifacts {
        outcome,
        summary,
        metrics_csv,
    })
}

fn write(path: PathBuf, contents: &str) -> Result<(), RunError> {
    fs::write(&path, contents).map_err(|source| RunError::Io { path, source })
}

pub fn write_artifacts(cfg: &RunConfig, artifacts: &RunArtifacts) -> Result<(), RunError> {
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|source| RunError::Io {
        path: dir.clone(),
        source,
    })?;
    write(dir.join("metrics.csv"), &artifacts.metrics_csv)?;
    write(dir.join("config.toml"), &cfg.to_toml_string())?;
    write(dir.join("summary.toml"), &artifacts.summary.to_toml_string())
}

/// Loads data, trains, and writes the artifacts to `cfg.output_dir`.
pub fn run(
    cfg: &RunConfig,
    data_dir: &Path,
    on_epoch: &mut dyn FnMut(&EpochMetrics),
) -> Result<RunArtifacts, RunError> {
    let data = prepare_data(cfg, data_dir)?;
    let artifacts = train(cfg, &data, on_epoch)?;
    write_artifacts(cfg, &artifacts)?;
    Ok(artifacts)
}

/// Resolution order: explicit argument, config file, environment.
pub fn resolve_data_dir(explicit: Option<&Path>, cfg: &RunConfig) -> Result<PathBuf, RunError> {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| cfg.data_dir.clone())
        .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
        .ok_or(RunError::NoDataDir)
}
