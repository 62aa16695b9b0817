//! Mini-batch SGD with gradient-norm-triggered batch size and learning rate
//! schedules, together with the closed-form SFO complexity and critical batch
//! size theory for constant-batch SGD.
//!
//! The crate is organised bottom-up:
//!
//! - [`problems`]: finite-sum objectives with exact per-sample and full
//!   gradients, and estimation of the smoothness / variance constants.
//! - [`schedulers`]: stage-based state machines producing the batch size,
//!   learning rate and gradient-norm threshold for each stage.
//! - [`engine`]: the SGD loop, SFO accounting and run traces.
//! - [`theory`]: bias/variance bounds, `T(b)`, `N(b)`, critical batch size and
//!   the empirical critical batch size sweep.

pub mod engine;
pub mod error;
pub mod problems;
pub mod rng;
pub mod schedulers;
pub mod theory;

pub use engine::{run, RunConfig, RunJob, RunTrace, StepRecord};
pub use error::{Error, Result};
pub use problems::{estimate_constants, ParamVector, Problem, ProblemKind, ProblemSpec, TheoryConstants};
pub use schedulers::{Scheduler, SchedulerConfig, SchedulerKind, StageParams};
pub use theory::SfoCurve;
