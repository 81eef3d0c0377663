//! Run configuration.
//!
//! A TOML file whose every field is optional; anything left out takes the
//! default experiment value. Unknown keys are rejected, and range checks name
//! the offending key.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backprop::BpHyperParams;
use crate::mnist::SplitSpec;
use crate::snn::Time;
use crate::stdp::StdpConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("`{key}` = {value} is out of range: {rule}")]
    OutOfRange {
        key: &'static str,
        value: String,
        rule: &'static str,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    #[default]
    Proposed,
    BpOnly,
    SelfTraining,
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExperimentKind::Proposed => "proposed",
            ExperimentKind::BpOnly => "bp-only",
            ExperimentKind::SelfTraining => "self-training",
        })
    }
}

impl FromStr for ExperimentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "proposed" => Ok(ExperimentKind::Proposed),
            "bp-only" => Ok(ExperimentKind::BpOnly),
            "self-training" => Ok(ExperimentKind::SelfTraining),
            other => Err(format!(
                "unknown experiment kind `{other}` (proposed | bp-only | self-training)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub inputs: usize,
    pub hidden: usize,
    pub outputs: usize,
    pub tau_mp: f64,
    /// Lateral inhibition strength of the hidden layer.
    pub mu_hidden: f64,
    /// Lateral inhibition strength of the output layer.
    pub mu_output: f64,
    pub sigma: f64,
    pub t_ref: f64,
    /// Maximum input firing rate, spikes per second.
    pub f_max: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            inputs: 784,
            hidden: 300,
            outputs: 10,
            tau_mp: 20.0,
            mu_hidden: -0.4,
            mu_output: -1.0,
            sigma: 0.5,
            t_ref: 1.0,
            f_max: 150.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schedule {
    pub bp_epochs: usize,
    pub stdp_epochs: usize,
    /// Evaluate on the test sets every this many epochs (the last epoch of a
    /// phase is always evaluated).
    pub eval_every: usize,
    pub presentation_ms_train: Time,
    pub presentation_ms_test: Time,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            bp_epochs: 150,
            stdp_epochs: 50,
            eval_every: 1,
            presentation_ms_train: 50,
            presentation_ms_test: 150,
        }
    }
}

impl Schedule {
    pub fn total_epochs(&self) -> usize {
        self.bp_epochs + self.stdp_epochs
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelfTrainingConfig {
    pub epochs_per_round: usize,
    pub label_per_round: usize,
    /// Re-initialize the network at the start of every round.
    pub reinit_each_round: bool,
}

impl Default for SelfTrainingConfig {
    fn default() -> Self {
        Self {
            epochs_per_round: 200,
            label_per_round: 200,
            reinit_each_round: false,
        }
    }
}

/// Early stop for the STDP phase. `patience = None` disables it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct GuardConfig {
    pub patience: Option<usize>,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data_dir: Option<PathBuf>,
    pub network: NetworkConfig,
    pub bp: BpHyperParams,
    pub stdp: StdpConfig,
    pub schedule: Schedule,
    pub split: SplitSpec,
    pub self_training: SelfTrainingConfig,
    pub guard: GuardConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::Proposed,
            seed: 1,
            output_dir: PathBuf::from("runs/default"),
            data_dir: None,
            network: NetworkConfig::default(),
            bp: BpHyperParams::default(),
            stdp: StdpConfig::default(),
            schedule: Schedule::default(),
            split: SplitSpec::default(),
            self_training: SelfTrainingConfig::default(),
            guard: GuardConfig::default(),
        }
    }
}

fn check(ok: bool, key: &'static str, value: impl fmt::Display, rule: &'static str) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::OutOfRange {
            key,
            value: value.to_string(),
            rule,
        })
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let n = &self.network;
        check(n.inputs >= 1, "network.inputs", n.inputs, ">= 1")?;
        check(n.hidden >= 1, "network.hidden", n.hidden, ">= 1")?;
        check(n.outputs >= 2, "network.outputs", n.outputs, ">= 2")?;
        check(n.tau_mp > 0.0, "network.tau_mp", n.tau_mp, "> 0")?;
        check((-1.0..=0.0).contains(&n.mu_hidden), "network.mu_hidden", n.mu_hidden, "in [-1, 0]")?;
        check((-1.0..=0.0).contains(&n.mu_output), "network.mu_output", n.mu_output, "in [-1, 0]")?;
        check((0.0..=1.0).contains(&n.sigma), "network.sigma", n.sigma, "in [0, 1]")?;
        check(n.t_ref >= 0.0, "network.t_ref", n.t_ref, ">= 0")?;
        check(n.f_max > 0.0 && n.f_max <= 1000.0, "network.f_max", n.f_max, "in (0, 1000]")?;

        let b = &self.bp;
        check(b.alpha > 1.0, "bp.alpha", b.alpha, "> 1")?;
        check(b.eta_w > 0.0, "bp.eta_w", b.eta_w, "> 0")?;
        check(b.eta_th > 0.0, "bp.eta_th", b.eta_th, "> 0")?;
        check(b.gamma.is_finite(), "bp.gamma", b.gamma, "finite")?;
        check(b.rho >= 0.0, "bp.rho", b.rho, ">= 0")?;
        check(b.batch_size >= 1, "bp.batch_size", b.batch_size, ">= 1")?;
        check(b.target_scale > 0.0, "bp.target_scale", b.target_scale, "> 0")?;

        let s = &self.stdp;
        check(s.a_plus > 0.0, "stdp.a_plus", s.a_plus, "> 0")?;
        check(s.a_minus < 0.0, "stdp.a_minus", s.a_minus, "< 0")?;
        check(s.tau_plus > 0.0, "stdp.tau_plus", s.tau_plus, "> 0")?;
        check(s.tau_minus > 0.0, "stdp.tau_minus", s.tau_minus, "> 0")?;
        check(s.learning_rate >= 0.0, "stdp.learning_rate", s.learning_rate, ">= 0")?;
        check(s.window >= s.dead_zone, "stdp.window", s.window, ">= stdp.dead_zone")?;

        let sch = &self.schedule;
        check(sch.eval_every >= 1, "schedule.eval_every", sch.eval_every, ">= 1")?;
        check(sch.presentation_ms_train >= 1, "schedule.presentation_ms_train", sch.presentation_ms_train, ">= 1")?;
        check(sch.presentation_ms_test >= 1, "schedule.presentation_ms_test", sch.presentation_ms_test, ">= 1")?;

        let sp = &self.split;
        check(sp.labeled_per_class >= 1, "split.labeled_per_class", sp.labeled_per_class, ">= 1")?;
        check(sp.test_sets >= 1, "split.test_sets", sp.test_sets, ">= 1")?;
        check(sp.test_per_class >= 1, "split.test_per_class", sp.test_per_class, ">= 1")?;

        let st = &self.self_training;
        check(st.label_per_round >= 1, "self_training.label_per_round", st.label_per_round, ">= 1")?;
        check(st.epochs_per_round >= 1, "self_training.epochs_per_round", st.epochs_per_round, ">= 1")?;

        check(self.guard.margin >= 0.0, "guard.margin", self.guard.margin, ">= 0")?;
        if let Some(p) = self.guard.patience {
            check(p >= 1, "guard.patience", p, ">= 1")?;
        }
        Ok(())
    }
}
