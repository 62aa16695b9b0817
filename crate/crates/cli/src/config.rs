//! Experiment configuration files.
//!
//! One TOML file describes one experiment:
//!
//! ```toml
//! name = "exp"                 # optional label used by `compare`
//!
//! [problem]                    # synthetic finite-sum problem
//! kind = "quadratic"           # quadratic | logistic | tiny_mlp
//! n = 1024
//! d = 16
//! seed = 7
//! noise = 3.5
//!
//! [scheduler]                  # see SchedulerConfig for the keys per kind
//! kind = "adaptive_exponential"
//! stages = 5
//! b0 = 16
//! eta0 = 0.08
//! eps0 = 1.8
//! delta = 2.0
//! gamma = 1.4
//!
//! [run]
//! max_steps = 5000
//! seeds = [0, 1, 2]
//! check_interval = 1           # optional, default 1
//! stop_eps = 0.45              # optional
//!
//! [output]                     # optional
//! dir = "out"
//! all_steps = false
//!
//! [sweep]                      # only read by `sweep`
//! b_star = 16                  # or eps = ...
//! batches = [2, 4, 8, 16]
//! ```

use std::path::{Path, PathBuf};

use critbatch_core::engine::RunConfig;
use critbatch_core::{ProblemSpec, SchedulerConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub problem: ProblemSpec,
    pub scheduler: SchedulerConfig,
    pub run: RunSpec,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub max_steps: usize,
    pub seeds: Vec<u64>,
    #[serde(default = "one")]
    pub check_interval: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_eps: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    /// Write every step to the traces, not only check steps.
    #[serde(default)]
    pub all_steps: bool,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            dir: default_dir(),
            all_steps: false,
        }
    }
}

/// Parameters of the critical batch size sweep. Exactly one of `eps` and
/// `b_star` sets the target; `b_star` picks `eps = sqrt(2 C2 / b_star)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_star: Option<f64>,
    /// Learning rate of the constant runs. Defaults to `scheduler.eta0`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batches: Option<Vec<u64>>,
    /// Probe budget for the constant estimation.
    #[serde(default = "default_probes")]
    pub probes: usize,
}

fn one() -> usize {
    1
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_probes() -> usize {
    8
}

/// Command-line overrides applied on top of a parsed config.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seeds: Option<Vec<u64>>,
    pub check_interval: Option<usize>,
    pub all_steps: bool,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(dir) = &o.out {
            self.output.dir = dir.clone();
        }
        if let Some(seeds) = &o.seeds {
            self.run.seeds = seeds.clone();
        }
        if let Some(k) = o.check_interval {
            self.run.check_interval = k;
        }
        self.output.all_steps |= o.all_steps;
    }

    /// Label used for output directories and rankings.
    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.scheduler.kind.name().to_string())
    }

    pub fn run_config(&self, seed: u64) -> RunConfig {
        RunConfig {
            max_steps: self.run.max_steps,
            seed,
            check_interval: self.run.check_interval,
            stop_eps: self.run.stop_eps,
        }
    }

    /// Checks the run block. Problem and scheduler checks need the generated
    /// problem and happen in [`crate::commands::prepare`].
    pub fn validate_run(&self) -> Result<(), CliError> {
        if let Some(name) = &self.name {
            let ok = !name.is_empty()
                && !name.starts_with('.')
                && name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c));
            if !ok {
                return Err(CliError::Config(format!(
                    "name: {name:?} must be nonempty ASCII letters, digits, '-', '_' or '.', not starting with '.'"
                )));
            }
        }
        if self.run.seeds.is_empty() {
            return Err(CliError::Config("run.seeds: at least one seed is required".into()));
        }
        let mut sorted = self.run.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(CliError::Config("run.seeds: seeds must be distinct".into()));
        }
        self.run_config(0).validate()?;
        if let Some(s) = &self.sweep {
            match (s.eps, s.b_star) {
                (Some(e), None) if e > 0.0 && e.is_finite() => {}
                (None, Some(b)) if b > 0.0 && b.is_finite() => {}
                (Some(_), Some(_)) => return Err(CliError::Config("sweep: give eps or b_star, not both".into())),
                (None, None) => return Err(CliError::Config("sweep: eps or b_star is required".into())),
                _ => return Err(CliError::Config("sweep: eps and b_star must be positive".into())),
            }
            if s.probes == 0 {
                return Err(CliError::Config("sweep.probes: must be at least 1".into()));
            }
            if s.eta.is_some_and(|e| !(e > 0.0 && e.is_finite())) {
                return Err(CliError::Config("sweep.eta: must be positive".into()));
            }
        }
        Ok(())
    }
}
