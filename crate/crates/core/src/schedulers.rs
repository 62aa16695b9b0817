//! Stage-based batch size / learning rate schedules.
//!
//! A schedule is described by a flat [`SchedulerConfig`] (one stable key per
//! parameter) and turned into a running [`Scheduler`] by
//! [`SchedulerConfig::validate`]. Stage `m` of the two adaptive schedules is
//!
//! | kind                   | batch size        | learning rate   | threshold              |
//! |------------------------|-------------------|-----------------|------------------------|
//! | `adaptive_linear`      | `b0 + m * delta_b`| `eta0`          | `eps0 / sqrt(1 + m)`   |
//! | `adaptive_exponential` | `b0 * delta^m`    | `eta0 * gamma^m`| `eps0 / sqrt(delta^m)` |
//!
//! and a stage advances (at most once per check) when the observed full
//! gradient norm is `<=` the current threshold. Batch sizes are capped at the
//! number of samples `n`; exponential batch sizes are rounded half-up and
//! forced to grow by at least one per stage before the cap.
//!
//! The baselines are a constant schedule, cosine annealing of the learning
//! rate at constant batch size, and a fixed-interval schedule that applies the
//! same growth factors every `interval` steps regardless of the gradient.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerKind {
    ConstantBslr,
    AdaptiveLinear,
    AdaptiveExponential,
    CosineLr,
    FixedInterval,
}

impl SchedulerKind {
    pub fn name(&self) -> &'static str {
        match self {
            SchedulerKind::ConstantBslr => "constant_bslr",
            SchedulerKind::AdaptiveLinear => "adaptive_linear",
            SchedulerKind::AdaptiveExponential => "adaptive_exponential",
            SchedulerKind::CosineLr => "cosine_lr",
            SchedulerKind::FixedInterval => "fixed_interval",
        }
    }

    pub fn is_adaptive(&self) -> bool {
        matches!(self, SchedulerKind::AdaptiveLinear | SchedulerKind::AdaptiveExponential)
    }
}

impl fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Unvalidated scheduler parameters, as read from a config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulerConfig {
    pub kind: SchedulerKind,
    /// Total number of stages `M`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stages: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b0: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_b: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interval: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_min: Option<f64>,
}

impl SchedulerConfig {
    pub fn new(kind: SchedulerKind, b0: usize, eta0: f64) -> Self {
        SchedulerConfig {
            kind,
            stages: None,
            b0: Some(b0),
            eta0: Some(eta0),
            eps0: None,
            delta_b: None,
            delta: None,
            gamma: None,
            interval: None,
            t_max: None,
            eta_min: None,
        }
    }

    pub fn constant(b: usize, eta: f64) -> Self {
        Self::new(SchedulerKind::ConstantBslr, b, eta)
    }

    pub fn adaptive_linear(b0: usize, delta_b: usize, eta: f64, eps0: f64, stages: usize) -> Self {
        SchedulerConfig {
            stages: Some(stages),
            eps0: Some(eps0),
            delta_b: Some(delta_b),
            ..Self::new(SchedulerKind::AdaptiveLinear, b0, eta)
        }
    }

    pub fn adaptive_exponential(b0: usize, delta: f64, eta0: f64, gamma: f64, eps0: f64, stages: usize) -> Self {
        SchedulerConfig {
            stages: Some(stages),
            eps0: Some(eps0),
            delta: Some(delta),
            gamma: Some(gamma),
            ..Self::new(SchedulerKind::AdaptiveExponential, b0, eta0)
        }
    }

    pub fn cosine(b: usize, eta0: f64, t_max: usize) -> Self {
        SchedulerConfig {
            t_max: Some(t_max),
            ..Self::new(SchedulerKind::CosineLr, b, eta0)
        }
    }

    pub fn fixed_interval_exponential(
        b0: usize,
        delta: f64,
        eta0: f64,
        gamma: f64,
        interval: usize,
        stages: usize,
    ) -> Self {
        SchedulerConfig {
            stages: Some(stages),
            delta: Some(delta),
            gamma: Some(gamma),
            interval: Some(interval),
            ..Self::new(SchedulerKind::FixedInterval, b0, eta0)
        }
    }

    fn require<T: Copy>(&self, value: Option<T>, field: &'static str) -> Result<T> {
        value.ok_or(Error::MissingParameter {
            kind: self.kind.name(),
            field,
        })
    }

    fn exponential_growth(&self) -> Result<Growth> {
        let delta = self.require(self.delta, "delta")?;
        let gamma = self.require(self.gamma, "gamma")?;
        if !(delta > 1.0 && delta.is_finite()) {
            return Err(Error::config("delta", "batch growth factor must exceed 1"));
        }
        if !(gamma > 1.0 && gamma.is_finite()) {
            return Err(Error::config("gamma", "learning rate growth factor must exceed 1"));
        }
        if gamma * gamma >= delta {
            return Err(Error::config(
                "gamma",
                format!("gamma^2 = {} must be strictly below delta = {delta}", gamma * gamma),
            ));
        }
        Ok(Growth::Exponential { delta, gamma })
    }

    fn linear_growth(&self) -> Result<Growth> {
        let delta_b = self.require(self.delta_b, "delta_b")?;
        if delta_b == 0 {
            return Err(Error::config("delta_b", "batch increment must be at least 1"));
        }
        Ok(Growth::Linear { delta_b })
    }

    fn staged(&self) -> Result<usize> {
        let m = self.require(self.stages, "stages")?;
        if m == 0 {
            return Err(Error::config("stages", "at least one stage is required"));
        }
        Ok(m)
    }

    /// Checks every parameter the kind needs and builds a scheduler at
    /// stage 0.
    ///
    /// `smoothness` is the `L` of the target problem; a projected learning
    /// rate at or above `2/L` is reported as a warning, not an error. `n` caps
    /// the batch size.
    pub fn validate(&self, smoothness: f64, n: usize) -> Result<Validated> {
        let b0 = self.require(self.b0, "b0")?;
        let eta0 = self.require(self.eta0, "eta0")?;
        if b0 < 1 {
            return Err(Error::config("b0", "initial batch size must be at least 1"));
        }
        if !(eta0 > 0.0 && eta0.is_finite()) {
            return Err(Error::config("eta0", "initial learning rate must be positive"));
        }
        if n == 0 {
            return Err(Error::config("n", "problem has no samples"));
        }
        let eps0 = |cfg: &Self| -> Result<f64> {
            let e = cfg.require(cfg.eps0, "eps0")?;
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::config("eps0", "initial threshold must be positive"));
            }
            Ok(e)
        };

        let (policy, stages) = match self.kind {
            SchedulerKind::ConstantBslr => (Policy::Constant, self.single_stage()?),
            SchedulerKind::AdaptiveLinear => (
                Policy::Adaptive {
                    growth: self.linear_growth()?,
                    eps0: eps0(self)?,
                },
                self.staged()?,
            ),
            SchedulerKind::AdaptiveExponential => (
                Policy::Adaptive {
                    growth: self.exponential_growth()?,
                    eps0: eps0(self)?,
                },
                self.staged()?,
            ),
            SchedulerKind::CosineLr => {
                let t_max = self.require(self.t_max, "t_max")?;
                if t_max == 0 {
                    return Err(Error::config("t_max", "must be at least 1"));
                }
                let eta_min = self.eta_min.unwrap_or(0.0);
                if !(eta_min >= 0.0 && eta_min <= eta0) {
                    return Err(Error::config("eta_min", "must lie in [0, eta0]"));
                }
                (Policy::Cosine { t_max, eta_min }, self.single_stage()?)
            }
            SchedulerKind::FixedInterval => {
                let growth = match (self.delta_b.is_some(), self.delta.is_some() || self.gamma.is_some()) {
                    (true, false) => self.linear_growth()?,
                    (false, true) => self.exponential_growth()?,
                    (true, true) => {
                        return Err(Error::config(
                            "delta_b",
                            "give either delta_b (linear) or delta/gamma (exponential), not both",
                        ))
                    }
                    (false, false) => {
                        return Err(Error::MissingParameter {
                            kind: self.kind.name(),
                            field: "delta_b or delta/gamma",
                        })
                    }
                };
                let interval = self.require(self.interval, "interval")?;
                if interval == 0 {
                    return Err(Error::config("interval", "must be at least 1"));
                }
                (Policy::FixedInterval { growth, interval }, self.staged()?)
            }
        };

        let mut warnings = Vec::new();
        if b0 > n {
            warnings.push(Warning::InitialBatchCapped { b0, n });
        }
        let eta_final = match policy {
            Policy::Adaptive {
                growth: Growth::Exponential { gamma, .. },
                ..
            }
            | Policy::FixedInterval {
                growth: Growth::Exponential { gamma, .. },
                ..
            } => eta0 * gamma.powi((stages - 1) as i32),
            _ => eta0,
        };
        if smoothness > 0.0 && eta_final * smoothness >= 2.0 {
            warnings.push(Warning::LearningRateAboveLimit {
                eta: eta_final,
                limit: 2.0 / smoothness,
            });
        }

        let mut scheduler = Scheduler {
            kind: self.kind,
            policy,
            stages,
            b0,
            eta0,
            cap: n,
            stage: 0,
            current: StageParams {
                batch_size: b0,
                lr: eta0,
                threshold: None,
            },
            capped: false,
        };
        scheduler.enter_stage(0);
        Ok(Validated { scheduler, warnings })
    }

    fn single_stage(&self) -> Result<usize> {
        match self.stages {
            None | Some(1) => Ok(1),
            Some(_) => Err(Error::config(
                "stages",
                format!("{} schedules have exactly one stage", self.kind),
            )),
        }
    }
}

/// Non-fatal findings from validation.
#[derive(Clone, Debug, PartialEq)]
pub enum Warning {
    LearningRateAboveLimit { eta: f64, limit: f64 },
    InitialBatchCapped { b0: usize, n: usize },
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Warning::LearningRateAboveLimit { eta, limit } => write!(
                f,
                "final-stage learning rate {eta} reaches 2/L = {limit}; the convergence bound does not hold there"
            ),
            Warning::InitialBatchCapped { b0, n } => {
                write!(f, "initial batch size {b0} exceeds n = {n} and is capped")
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Validated {
    pub scheduler: Scheduler,
    pub warnings: Vec<Warning>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Growth {
    Linear { delta_b: usize },
    Exponential { delta: f64, gamma: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Policy {
    Constant,
    Adaptive { growth: Growth, eps0: f64 },
    Cosine { t_max: usize, eta_min: f64 },
    FixedInterval { growth: Growth, interval: usize },
}

/// Batch size, learning rate and (for adaptive kinds) gradient-norm
/// threshold in effect for one stage.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StageParams {
    pub batch_size: usize,
    pub lr: f64,
    pub threshold: Option<f64>,
}

/// A validated schedule and its current stage.
#[derive(Clone, Debug, PartialEq)]
pub struct Scheduler {
    kind: SchedulerKind,
    policy: Policy,
    stages: usize,
    b0: usize,
    eta0: f64,
    cap: usize,
    stage: usize,
    current: StageParams,
    capped: bool,
}

fn round_half_up(x: f64) -> f64 {
    (x + 0.5).floor()
}

impl Scheduler {
    pub fn kind(&self) -> SchedulerKind {
        self.kind
    }

    pub fn stage(&self) -> usize {
        self.stage
    }

    pub fn num_stages(&self) -> usize {
        self.stages
    }

    pub fn current(&self) -> StageParams {
        self.current
    }

    pub fn batch_size(&self) -> usize {
        self.current.batch_size
    }

    pub fn lr(&self) -> f64 {
        self.current.lr
    }

    pub fn threshold(&self) -> Option<f64> {
        self.current.threshold
    }

    pub fn is_final_stage(&self) -> bool {
        self.stage + 1 >= self.stages
    }

    /// True when the current stage's batch size was cut down to `n`.
    pub fn batch_capped(&self) -> bool {
        self.capped
    }

    /// Uncapped batch size of stage `m`, as a real number.
    fn raw_batch(&self, growth: Growth, m: usize) -> f64 {
        match growth {
            Growth::Linear { delta_b } => self.b0 as f64 + (m as f64) * delta_b as f64,
            Growth::Exponential { delta, .. } => {
                let mut b = self.b0 as f64;
                for k in 1..=m {
                    b = round_half_up(self.b0 as f64 * delta.powi(k as i32)).max(b + 1.0);
                }
                b
            }
        }
    }

    fn grown(&self, growth: Growth, m: usize) -> (f64, f64) {
        let lr = match growth {
            Growth::Linear { .. } => self.eta0,
            Growth::Exponential { gamma, .. } => self.eta0 * gamma.powi(m as i32),
        };
        (self.raw_batch(growth, m), lr)
    }

    /// Parameters of stage `m`, independent of the current stage.
    pub fn stage_params(&self, m: usize) -> Result<StageParams> {
        if m >= self.stages {
            return Err(Error::StageOutOfRange {
                stage: m,
                stages: self.stages,
            });
        }
        Ok(self.params_unchecked(m).0)
    }

    fn params_unchecked(&self, m: usize) -> (StageParams, bool) {
        let (raw_b, lr, threshold) = match self.policy {
            Policy::Constant => (self.b0 as f64, self.eta0, None),
            Policy::Cosine { .. } => (self.b0 as f64, self.current.lr, None),
            Policy::Adaptive { growth, eps0 } => {
                let (b, lr) = self.grown(growth, m);
                let eps = match growth {
                    Growth::Linear { .. } => eps0 / ((1 + m) as f64).sqrt(),
                    Growth::Exponential { delta, .. } => eps0 / delta.powi(m as i32).sqrt(),
                };
                (b, lr, Some(eps))
            }
            Policy::FixedInterval { growth, .. } => {
                let (b, lr) = self.grown(growth, m);
                (b, lr, None)
            }
        };
        let capped = raw_b > self.cap as f64;
        let batch_size = if capped { self.cap } else { raw_b as usize };
        (
            StageParams {
                batch_size,
                lr,
                threshold,
            },
            capped,
        )
    }

    fn enter_stage(&mut self, m: usize) {
        let (params, capped) = self.params_unchecked(m);
        self.stage = m;
        self.current = params;
        self.capped = capped;
    }

    /// Feeds an observed full-gradient norm. Advances one stage when the
    /// norm is at or below the current threshold and a later stage exists.
    pub fn on_grad_norm(&mut self, grad_norm: f64) -> bool {
        let Some(eps) = self.current.threshold else {
            return false;
        };
        if grad_norm <= eps && self.stage + 1 < self.stages {
            self.enter_stage(self.stage + 1);
            true
        } else {
            false
        }
    }

    /// Informs the schedule that `t` steps have been taken. Returns the number
    /// of stage transitions applied.
    pub fn on_step(&mut self, t: usize) -> usize {
        match self.policy {
            Policy::Cosine { t_max, eta_min } => {
                let progress = t.min(t_max) as f64 / t_max as f64;
                self.current.lr = eta_min + 0.5 * (self.eta0 - eta_min) * (1.0 + (PI * progress).cos());
                0
            }
            Policy::FixedInterval { interval, .. } => {
                let target = (t / interval).min(self.stages - 1);
                let mut applied = 0;
                while self.stage < target {
                    self.enter_stage(self.stage + 1);
                    applied += 1;
                }
                applied
            }
            Policy::Constant | Policy::Adaptive { .. } => 0,
        }
    }
}
