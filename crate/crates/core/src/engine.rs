//! Mini-batch SGD driven by a [`Scheduler`].
//!
//! Step `t` (1-based) samples `b_t` indices with replacement, moves
//! `theta_{t-1}` to `theta_t` along the mini-batch gradient with rate
//! `eta_t`, then records `f(theta_t)`. Every `check_interval` steps the full
//! gradient norm at the new iterate is evaluated and handed to the scheduler,
//! which may advance one stage before the next step.
//!
//! `sfo_cumulative` counts only mini-batch gradient evaluations. Monitoring
//! costs `n` per full-gradient check and is kept in a separate counter.

use std::io::{self, Write};

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::problems::{ParamVector, Problem};
use crate::rng::{stream_rng, StreamRng, SAMPLING_STREAM};
use crate::schedulers::Scheduler;

/// Loss level treated as divergence.
pub const DIVERGENCE_LOSS: f64 = 1e12;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub max_steps: usize,
    pub seed: u64,
    pub check_interval: usize,
    pub stop_eps: Option<f64>,
}

impl RunConfig {
    pub fn new(max_steps: usize, seed: u64) -> Self {
        RunConfig {
            max_steps,
            seed,
            check_interval: 1,
            stop_eps: None,
        }
    }

    pub fn with_stop_eps(mut self, eps: f64) -> Self {
        self.stop_eps = Some(eps);
        self
    }

    pub fn with_check_interval(mut self, k: usize) -> Self {
        self.check_interval = k;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_steps == 0 {
            return Err(Error::config("max_steps", "must be at least 1"));
        }
        if self.check_interval == 0 {
            return Err(Error::config("check_interval", "must be at least 1"));
        }
        if let Some(eps) = self.stop_eps {
            if !(eps >= 0.0) {
                return Err(Error::config("stop_eps", "must be nonnegative"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub t: usize,
    pub loss: f64,
    /// Present on check steps only.
    pub grad_norm: Option<f64>,
    pub batch_size: usize,
    pub lr: f64,
    pub stage: usize,
    pub sfo_cumulative: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunTrace {
    /// One record per step, `t = 1, 2, ...` with no gaps.
    pub records: Vec<StepRecord>,
    pub terminal_theta: ParamVector,
    /// First check step whose gradient norm was `<= stop_eps`. `Some(0)`
    /// means the initial point already qualified.
    pub hit_step: Option<usize>,
    pub initial_loss: f64,
    pub initial_grad_norm: f64,
    /// Per-sample gradient evaluations spent on full-gradient monitoring.
    pub monitor_grad_evals: u64,
    /// Stage transitions, plus one if the final stage's own threshold was
    /// reached.
    pub stages_completed: usize,
    /// The batch size was cut to `n` at some point.
    pub batch_capped: bool,
}

impl RunTrace {
    pub fn steps(&self) -> usize {
        self.records.len()
    }

    pub fn total_sfo(&self) -> u64 {
        self.records.last().map_or(0, |r| r.sfo_cumulative)
    }

    pub fn final_loss(&self) -> f64 {
        self.records.last().map_or(self.initial_loss, |r| r.loss)
    }

    pub fn final_stage(&self) -> usize {
        self.records.last().map_or(0, |r| r.stage)
    }

    /// SFO spent when `hit_step` was reached.
    pub fn sfo_at_hit(&self) -> Option<u64> {
        self.hit_step.map(|t| if t == 0 { 0 } else { self.records[t - 1].sfo_cumulative })
    }

    /// Smallest observed gradient norm over `theta_0` and all check steps.
    pub fn min_grad_norm(&self) -> f64 {
        self.min_grad_norm_within(usize::MAX)
    }

    /// Smallest observed gradient norm over `theta_0, ..., theta_{horizon-1}`.
    pub fn min_grad_norm_within(&self, horizon: usize) -> f64 {
        self.records
            .iter()
            .take_while(|r| r.t < horizon)
            .filter_map(|r| r.grad_norm)
            .fold(self.initial_grad_norm, f64::min)
    }

    /// CSV with header `t,loss,grad_norm,batch_size,lr,stage,sfo_cumulative`.
    /// Only check steps are written unless `all_steps` is set, in which case
    /// non-check steps carry an empty `grad_norm` cell.
    pub fn write_csv<W: Write>(&self, mut w: W, all_steps: bool) -> io::Result<()> {
        writeln!(w, "t,loss,grad_norm,batch_size,lr,stage,sfo_cumulative")?;
        for r in &self.records {
            let norm = match r.grad_norm {
                Some(g) => g.to_string(),
                None if all_steps => String::new(),
                None => continue,
            };
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.t, r.loss, norm, r.batch_size, r.lr, r.stage, r.sfo_cumulative
            )?;
        }
        Ok(())
    }
}

fn fill_batch(n: usize, b: usize, rng: &mut StreamRng, out: &mut Vec<usize>) {
    out.clear();
    out.extend((0..b).map(|_| rng.random_range(0..n)));
}

/// Draws `b` indices i.i.d. uniformly from `0..n`, with replacement.
pub fn sample_batch(problem: &Problem, b: usize, rng: &mut StreamRng) -> Result<Vec<usize>> {
    if b == 0 {
        return Err(Error::ZeroBatchSize);
    }
    let mut out = Vec::with_capacity(b);
    fill_batch(problem.n(), b, rng, &mut out);
    Ok(out)
}

/// Average of the per-sample gradients over `batch` (repeats counted).
pub fn minibatch_grad(problem: &Problem, theta: &ParamVector, batch: &[usize]) -> Result<ParamVector> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if theta.dim() != problem.d() {
        return Err(Error::DimensionMismatch {
            expected: problem.d(),
            found: theta.dim(),
        });
    }
    if let Some(&bad) = batch.iter().find(|&&i| i >= problem.n()) {
        return Err(Error::SampleIndexOutOfRange {
            index: bad,
            n: problem.n(),
        });
    }
    let mut out = vec![0.0; problem.d()];
    accumulate_minibatch(problem, theta.as_slice(), batch, &mut out);
    Ok(ParamVector::from_raw(out))
}

fn accumulate_minibatch(problem: &Problem, theta: &[f64], batch: &[usize], out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    let w = 1.0 / batch.len() as f64;
    for &i in batch {
        problem.add_sample_grad(theta, i, w, out);
    }
}

/// Runs SGD from `theta0` under `scheduler` (cloned; the caller's copy is
/// untouched).
pub fn run(problem: &Problem, theta0: &ParamVector, scheduler: &Scheduler, config: &RunConfig) -> Result<RunTrace> {
    config.validate()?;
    if theta0.dim() != problem.d() {
        return Err(Error::DimensionMismatch {
            expected: problem.d(),
            found: theta0.dim(),
        });
    }
    let mut sched = scheduler.clone();
    let mut rng = stream_rng(config.seed, SAMPLING_STREAM);
    let n = problem.n();
    let d = problem.d();

    let mut theta = theta0.clone();
    let mut full = vec![0.0; d];
    let mut step_grad = vec![0.0; d];
    let mut batch = Vec::new();

    let initial_loss = problem.loss(&theta)?;
    problem.accumulate_full_grad(theta.as_slice(), &mut full);
    let initial_grad_norm = norm(&full);

    let mut trace = RunTrace {
        records: Vec::with_capacity(config.max_steps / config.check_interval + 1),
        terminal_theta: theta.clone(),
        hit_step: None,
        initial_loss,
        initial_grad_norm,
        monitor_grad_evals: n as u64,
        stages_completed: 0,
        batch_capped: sched.batch_capped(),
    };
    if !initial_loss.is_finite() || !initial_grad_norm.is_finite() {
        return Err(Error::Diverged {
            step: 0,
            reason: "non-finite loss or gradient at the initial point".into(),
            trace: Box::new(trace),
        });
    }
    if config.stop_eps.is_some_and(|eps| initial_grad_norm <= eps) {
        trace.hit_step = Some(0);
        return Ok(trace);
    }

    let mut sfo: u64 = 0;
    let mut final_threshold_met = false;
    for t in 1..=config.max_steps {
        sched.on_step(t - 1);
        let params = sched.current();
        let stage = sched.stage();
        trace.batch_capped |= sched.batch_capped();

        fill_batch(n, params.batch_size, &mut rng, &mut batch);
        accumulate_minibatch(problem, theta.as_slice(), &batch, &mut step_grad);
        for (x, g) in theta.as_mut_slice().iter_mut().zip(&step_grad) {
            *x -= params.lr * g;
        }
        sfo += params.batch_size as u64;

        let loss = problem.loss(&theta)?;
        let grad_norm = if t % config.check_interval == 0 {
            problem.accumulate_full_grad(theta.as_slice(), &mut full);
            trace.monitor_grad_evals += n as u64;
            Some(norm(&full))
        } else {
            None
        };
        trace.records.push(StepRecord {
            t,
            loss,
            grad_norm,
            batch_size: params.batch_size,
            lr: params.lr,
            stage,
            sfo_cumulative: sfo,
        });

        let bad = !theta.is_finite() || !loss.is_finite() || grad_norm.is_some_and(|g| !g.is_finite());
        if bad || loss > DIVERGENCE_LOSS {
            let reason = if bad {
                "non-finite parameter, loss or gradient".to_string()
            } else {
                format!("loss {loss} exceeds {DIVERGENCE_LOSS}")
            };
            trace.stages_completed = sched.stage() + final_threshold_met as usize;
            trace.terminal_theta = theta;
            return Err(Error::Diverged {
                step: t,
                reason,
                trace: Box::new(trace),
            });
        }

        if let Some(g) = grad_norm {
            if sched.is_final_stage() && sched.threshold().is_some_and(|eps| g <= eps) {
                final_threshold_met = true;
            }
            sched.on_grad_norm(g);
            if config.stop_eps.is_some_and(|eps| g <= eps) {
                trace.hit_step = Some(t);
                break;
            }
        }
    }
    trace.stages_completed = sched.stage() + final_threshold_met as usize;
    trace.terminal_theta = theta;
    Ok(trace)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// One independent run for [`run_many`].
#[derive(Clone, Debug)]
pub struct RunJob {
    pub theta0: ParamVector,
    pub scheduler: Scheduler,
    pub config: RunConfig,
}

/// Runs every job against the shared problem. Results are in job order
/// regardless of how the work was scheduled.
pub fn run_many(problem: &Problem, jobs: &[RunJob]) -> Vec<Result<RunTrace>> {
    let one = |job: &RunJob| run(problem, &job.theta0, &job.scheduler, &job.config);
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        jobs.par_iter().map(one).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        jobs.iter().map(one).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{ProblemKind, ProblemSpec};
    use crate::schedulers::SchedulerConfig;

    fn quad(n: usize, d: usize, seed: u64) -> (Problem, ParamVector) {
        let spec = ProblemSpec::new(ProblemKind::Quadratic, n, d, seed).with_noise(0.5);
        let p = Problem::generate(&spec).unwrap();
        let t0 = spec.initial_point(&p);
        (p, t0)
    }

    fn constant(p: &Problem, b: usize, eta: f64) -> Scheduler {
        SchedulerConfig::constant(b, eta)
            .validate(p.analytic_l().unwrap_or(1.0), p.n())
            .unwrap()
            .scheduler
    }

    #[test]
    fn single_sample_problem_always_draws_zero() {
        let p = Problem::quadratic(vec![vec![1.0, 2.0]], vec![0.5]).unwrap();
        let mut rng = stream_rng(3, SAMPLING_STREAM);
        assert!(sample_batch(&p, 17, &mut rng).unwrap().iter().all(|&i| i == 0));
        assert!(matches!(sample_batch(&p, 0, &mut rng), Err(Error::ZeroBatchSize)));
    }

    #[test]
    fn sampling_is_reproducible() {
        let (p, _) = quad(64, 2, 1);
        let a = sample_batch(&p, 4, &mut stream_rng(9, SAMPLING_STREAM)).unwrap();
        let b = sample_batch(&p, 4, &mut stream_rng(9, SAMPLING_STREAM)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn minibatch_degenerate_cases() {
        let (p, _) = quad(12, 3, 2);
        let theta = ParamVector::new(vec![0.3, -0.2, 1.0]).unwrap();
        let all: Vec<usize> = (0..p.n()).collect();
        let full = p.full_grad(&theta).unwrap();
        let mb = minibatch_grad(&p, &theta, &all).unwrap();
        assert!(mb.distance(&full) <= 1e-12 * (1.0 + full.norm()));
        assert_eq!(
            minibatch_grad(&p, &theta, &[5]).unwrap(),
            p.per_sample_grad(&theta, 5).unwrap()
        );
        assert!(matches!(minibatch_grad(&p, &theta, &[]), Err(Error::EmptyBatch)));
        assert!(minibatch_grad(&p, &theta, &[12]).is_err());
    }

    #[test]
    fn exact_gradient_descent_is_monotone() {
        // With identical samples every mini-batch gradient is the full one.
        let mut spec = ProblemSpec::new(ProblemKind::Quadratic, 32, 4, 5).with_noise(0.5);
        spec.identical_samples = true;
        spec.init_scale = Some(2.0);
        let p = Problem::generate(&spec).unwrap();
        let t0 = spec.initial_point(&p);
        let s = constant(&p, 32, 1.0 / p.analytic_l().unwrap());
        let trace = run(&p, &t0, &s, &RunConfig::new(200, 1)).unwrap();
        let mut prev = trace.initial_loss;
        for r in &trace.records {
            assert!(r.loss <= prev + 1e-14 * prev.max(1.0));
            prev = r.loss;
        }
    }

    #[test]
    fn zero_variance_is_seed_independent() {
        let mut spec = ProblemSpec::new(ProblemKind::Quadratic, 20, 3, 8).with_noise(1.0);
        spec.identical_samples = true;
        let p = Problem::generate(&spec).unwrap();
        let t0 = ParamVector::new(vec![1.0, -1.0, 0.5]).unwrap();
        let s = constant(&p, 4, 0.5 / p.analytic_l().unwrap());
        let a = run(&p, &t0, &s, &RunConfig::new(100, 1)).unwrap();
        let b = run(&p, &t0, &s, &RunConfig::new(100, 999)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sfo_and_stage_bookkeeping() {
        let (p, t0) = quad(128, 4, 3);
        let l = p.analytic_l().unwrap();
        let s = SchedulerConfig::adaptive_exponential(4, 2.0, 0.2 / l, 1.2, 1.0, 5)
            .validate(l, p.n())
            .unwrap()
            .scheduler;
        let cfg = RunConfig::new(3000, 4).with_check_interval(3);
        let trace = run(&p, &t0, &s, &cfg).unwrap();
        let mut sfo = 0;
        let mut stage = 0;
        for (k, r) in trace.records.iter().enumerate() {
            assert_eq!(r.t, k + 1);
            sfo += r.batch_size as u64;
            assert_eq!(r.sfo_cumulative, sfo);
            assert!(r.stage >= stage);
            stage = r.stage;
            assert_eq!(r.grad_norm.is_some(), r.t % 3 == 0);
        }
        assert_eq!(trace.monitor_grad_evals, 128 * (1 + 1000));
        assert!(trace.final_stage() > 0);
    }

    #[test]
    fn stop_eps_hit_is_first_crossing() {
        let (p, t0) = quad(64, 4, 4);
        let l = p.analytic_l().unwrap();
        let s = constant(&p, 16, 0.5 / l);
        let eps = 0.5 * t0_norm(&p, &t0);
        let trace = run(&p, &t0, &s, &RunConfig::new(5000, 2).with_stop_eps(eps)).unwrap();
        let hit = trace.hit_step.unwrap();
        for r in &trace.records[..hit - 1] {
            assert!(r.grad_norm.unwrap() > eps);
        }
        assert!(trace.records[hit - 1].grad_norm.unwrap() <= eps);
        assert_eq!(trace.steps(), hit);
        assert_eq!(trace.sfo_at_hit(), Some(16 * hit as u64));
    }

    fn t0_norm(p: &Problem, t0: &ParamVector) -> f64 {
        p.full_grad(t0).unwrap().norm()
    }

    #[test]
    fn divergence_is_reported_with_partial_trace() {
        let (p, t0) = quad(32, 4, 6);
        let l = p.analytic_l().unwrap();
        let s = SchedulerConfig::constant(32, 5.0 / l).validate(l, 32).unwrap().scheduler;
        match run(&p, &t0, &s, &RunConfig::new(10_000, 1)) {
            Err(Error::Diverged { step, trace, .. }) => {
                assert_eq!(trace.records.len(), step);
                assert!(step < 10_000);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn run_many_preserves_order() {
        let (p, t0) = quad(32, 3, 7);
        let s = constant(&p, 4, 0.3 / p.analytic_l().unwrap());
        let jobs: Vec<RunJob> = (0..6)
            .map(|seed| RunJob {
                theta0: t0.clone(),
                scheduler: s.clone(),
                config: RunConfig::new(50, seed),
            })
            .collect();
        let out = run_many(&p, &jobs);
        for (seed, res) in out.into_iter().enumerate() {
            let direct = run(&p, &t0, &s, &RunConfig::new(50, seed as u64)).unwrap();
            assert_eq!(res.unwrap(), direct);
        }
    }

    #[test]
    fn csv_shape() {
        let (p, t0) = quad(16, 2, 8);
        let s = constant(&p, 2, 0.3 / p.analytic_l().unwrap());
        let trace = run(&p, &t0, &s, &RunConfig::new(6, 1).with_check_interval(2)).unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf, false).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,loss,grad_norm,batch_size,lr,stage,sfo_cumulative");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("2,"));
        let mut buf = Vec::new();
        trace.write_csv(&mut buf, true).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 7);
        assert!(text.lines().nth(1).unwrap().split(',').nth(2).unwrap().is_empty());
    }

    #[test]
    fn config_errors() {
        let (p, t0) = quad(8, 2, 1);
        let s = constant(&p, 2, 0.1);
        assert!(run(&p, &t0, &s, &RunConfig::new(0, 1)).is_err());
        assert!(run(&p, &t0, &s, &RunConfig::new(5, 1).with_check_interval(0)).is_err());
        assert!(run(&p, &ParamVector::zeros(3), &s, &RunConfig::new(5, 1)).is_err());
    }
}
