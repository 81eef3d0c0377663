//! Metrics CSV and run summary.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::pipeline::{EpochMetrics, TrainOutcome};

pub const CSV_HEADER: &str = "epoch,phase,mean_accuracy,accuracy_std,seconds";

/// One row per epoch, LF line endings. Accuracies carry nine decimals, which
/// is at least six significant digits for anything above 0.001.
pub fn emit_metrics(series: &[EpochMetrics]) -> String {
    let mut out = String::with_capacity(48 * (series.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for m in series {
        writeln!(
            out,
            "{},{},{:.9},{:.9},{:.3}",
            m.epoch, m.phase, m.mean_accuracy, m.accuracy_std, m.seconds
        )
        .expect("writing to a String cannot fail");
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: usize,
    pub first_epoch: usize,
    pub pool_size: usize,
    pub remaining_unlabeled: usize,
    pub pseudo_label_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub kind: String,
    pub seed: u64,
    pub epochs: usize,
    pub best_accuracy: f64,
    pub best_accuracy_std: f64,
    pub best_epoch: usize,
    pub best_phase: String,
    /// Simulated training time to the best epoch.
    pub seconds_to_best: f64,
    pub wall_seconds_to_best: f64,
    pub total_seconds: f64,
    pub total_wall_seconds: f64,
    pub final_accuracy: f64,
    pub bp_end_accuracy: Option<f64>,
    pub improvement_rate: Option<f64>,
    pub stdp_stopped_at: Option<usize>,
    pub rounds: Vec<RoundSummary>,
}

impl RunSummary {
    pub fn from_outcome(kind: &str, seed: u64, outcome: &TrainOutcome) -> Option<Self> {
        let best = outcome.best()?;
        let last = outcome.metrics.last()?;
        let improvement_rate = match outcome.bp_end_accuracy {
            Some(b) if b > 0.0 && last.phase.to_string() == "stdp" => Some(last.mean_accuracy / b),
            _ => None,
        };
        Some(Self {
            kind: kind.to_string(),
            seed,
            epochs: outcome.metrics.len(),
            best_accuracy: best.mean_accuracy,
            best_accuracy_std: best.accuracy_std,
            best_epoch: best.epoch,
            best_phase: best.phase.to_string(),
            seconds_to_best: best.seconds,
            wall_seconds_to_best: best.wall_seconds,
            total_seconds: last.seconds,
            total_wall_seconds: last.wall_seconds,
            final_accuracy: last.mean_accuracy,
            bp_end_accuracy: outcome.bp_end_accuracy,
            improvement_rate,
            stdp_stopped_at: outcome.stopped_at,
            rounds: outcome
                .rounds
                .iter()
                .map(|r| RoundSummary {
                    round: r.round,
                    first_epoch: r.first_epoch,
                    pool_size: r.pool_size,
                    remaining_unlabeled: r.remaining_unlabeled,
                    pseudo_label_accuracy: r.pseudo_label_accuracy,
                })
                .collect(),
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("summary is always representable as TOML")
    }

    pub fn from_toml_str(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }
}

/// A parsed metrics row.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub phase: String,
    pub mean_accuracy: f64,
    pub accuracy_std: f64,
    pub seconds: f64,
}

pub fn parse_metrics(csv: &str) -> Result<Vec<MetricsRow>, String> {
    let mut lines = csv.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        other => return Err(format!("unexpected header {other:?}")),
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(format!("row {}: expected 5 fields, got {}", i + 1, f.len()));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| format!("row {}: {e}", i + 1));
            Ok(MetricsRow {
                epoch: f[0].parse().map_err(|e| format!("row {}: {e}", i + 1))?,
                phase: f[1].to_string(),
                mean_accuracy: num(f[2])?,
                accuracy_std: num(f[3])?,
                seconds: num(f[4])?,
            })
        })
        .collect()
}
