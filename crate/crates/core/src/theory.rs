//! Closed-form bounds for mini-batch SGD and the SFO complexity of the
//! constant batch / constant learning rate method.
//!
//! With `eta_max = max_t eta_t < 2/L`,
//!
//! ```text
//! bias     B_T = 2 (f(theta0) - f*) / (2 - L eta_max) / sum_t eta_t
//! variance V_T = L sigma^2 / (2 - L eta_max) * (sum_t eta_t^2 / b_t) / sum_t eta_t
//! min_t E|grad f(theta_t)| <= sqrt(B_T + V_T)
//! ```
//!
//! For constant `(b, eta)` the bound is `sqrt(C1/T + C2/b)`, which is `<= eps`
//! once `b > C2/eps^2` and `T >= T(b) = C1 b / (eps^2 b - C2)`. The SFO
//! complexity `N(b) = b T(b)` is convex on that domain and minimised at the
//! critical batch size `b* = 2 C2 / eps^2`.

use std::io::{self, Write};

use serde::Serialize;

use crate::engine::{run_many, RunConfig, RunJob};
use crate::error::{Error, Result};
use crate::problems::{ParamVector, Problem, TheoryConstants};
use crate::schedulers::{Scheduler, SchedulerConfig};

fn check_etas(c: &TheoryConstants, etas: &[f64]) -> Result<(f64, f64)> {
    if etas.is_empty() {
        return Err(Error::Domain("learning rate sequence is empty".into()));
    }
    if etas.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
        return Err(Error::Domain("learning rates must be positive and finite".into()));
    }
    let eta_max = etas.iter().cloned().fold(0.0, f64::max);
    if c.l() * eta_max >= 2.0 {
        return Err(Error::Domain(format!(
            "eta_max = {eta_max} is not below 2/L = {}",
            2.0 / c.l()
        )));
    }
    Ok((eta_max, etas.iter().sum()))
}

/// Bias term `B_T`.
pub fn bias_term(c: &TheoryConstants, etas: &[f64]) -> Result<f64> {
    let (eta_max, sum) = check_etas(c, etas)?;
    Ok(2.0 * (c.f_theta0() - c.f_star()) / (2.0 - c.l() * eta_max) / sum)
}

/// Variance term `V_T`.
pub fn variance_term(c: &TheoryConstants, etas: &[f64], batch_sizes: &[usize]) -> Result<f64> {
    if etas.len() != batch_sizes.len() {
        return Err(Error::LengthMismatch {
            left: etas.len(),
            right: batch_sizes.len(),
        });
    }
    if batch_sizes.contains(&0) {
        return Err(Error::ZeroBatchSize);
    }
    let (eta_max, sum) = check_etas(c, etas)?;
    let weighted: f64 = etas
        .iter()
        .zip(batch_sizes)
        .map(|(&e, &b)| e * e / b as f64)
        .sum();
    Ok(c.l() * c.sigma_sq() / (2.0 - c.l() * eta_max) * weighted / sum)
}

/// `sqrt(B_T + V_T)`, the bound on `min_t E|grad f(theta_t)|`.
pub fn combined_bound(c: &TheoryConstants, etas: &[f64], batch_sizes: &[usize]) -> Result<f64> {
    Ok((bias_term(c, etas)? + variance_term(c, etas, batch_sizes)?).sqrt())
}

/// Smallest batch size accepted by [`steps_required`] and
/// [`sfo_complexity`]: `ceil(C2/eps^2) + 1`, one past the pole.
pub fn min_admissible_batch(c: &TheoryConstants, eps: f64) -> u64 {
    (c.c2() / (eps * eps)).ceil() as u64 + 1
}

fn check_domain(c: &TheoryConstants, eps: f64, b: u64) -> Result<()> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Domain("eps must be positive".into()));
    }
    let floor = min_admissible_batch(c, eps);
    if b < floor {
        return Err(Error::Domain(format!(
            "batch below variance floor: b = {b} but C2/eps^2 = {} requires b >= {floor}",
            c.c2() / (eps * eps)
        )));
    }
    Ok(())
}

/// `T(b) = C1 b / (eps^2 b - C2)`.
pub fn steps_required(c: &TheoryConstants, eps: f64, b: u64) -> Result<f64> {
    check_domain(c, eps, b)?;
    let b = b as f64;
    Ok(c.c1() * b / (eps * eps * b - c.c2()))
}

/// `N(b) = b T(b) = C1 b^2 / (eps^2 b - C2)`.
pub fn sfo_complexity(c: &TheoryConstants, eps: f64, b: u64) -> Result<f64> {
    check_domain(c, eps, b)?;
    Ok(sfo_formula(c.c1(), c.c2(), eps, b as f64))
}

/// `N(b)` for real `b`, without domain checks.
pub fn sfo_formula(c1: f64, c2: f64, eps: f64, b: f64) -> f64 {
    c1 * b * b / (eps * eps * b - c2)
}

/// `b* = 2 C2 / eps^2`. A value below 1 means any batch size is critical.
pub fn critical_batch_size(c: &TheoryConstants, eps: f64) -> f64 {
    2.0 * c.c2() / (eps * eps)
}

/// Per-step learning rates and batch sizes of `scheduler` when stage `m`
/// lasts `steps_per_stage[m]` steps.
pub fn expand_schedule(scheduler: &Scheduler, steps_per_stage: &[usize]) -> Result<(Vec<f64>, Vec<usize>)> {
    let mut etas = Vec::new();
    let mut bs = Vec::new();
    for (m, &len) in steps_per_stage.iter().enumerate() {
        let p = scheduler.stage_params(m)?;
        etas.extend(std::iter::repeat_n(p.lr, len));
        bs.extend(std::iter::repeat_n(p.batch_size, len));
    }
    Ok((etas, bs))
}

/// Seed statistics of the SFO needed to reach the target at one batch size.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SfoPoint {
    pub b: u64,
    pub sfo_mean: f64,
    pub sfo_min: u64,
    pub sfo_max: u64,
    /// At least one seed did not reach the target; its SFO entered the
    /// statistics as `b * max_steps`.
    pub censored: bool,
    pub hits: usize,
    pub runs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SfoCurve {
    pub eps: f64,
    pub constants: TheoryConstants,
    /// `(b, N(b))` for grid points inside the analytic domain.
    pub analytic: Vec<(u64, f64)>,
    pub points: Vec<SfoPoint>,
    pub b_star_analytic: f64,
    pub b_star_empirical: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SfoSummary {
    pub eps: f64,
    pub constants: TheoryConstants,
    pub b_star_analytic: f64,
    pub b_star_empirical: Option<u64>,
    pub censored_batches: Vec<u64>,
}

impl SfoCurve {
    /// CSV with header `b,sfo_mean,sfo_min,sfo_max,censored`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "b,sfo_mean,sfo_min,sfo_max,censored")?;
        for p in &self.points {
            writeln!(w, "{},{},{},{},{}", p.b, p.sfo_mean, p.sfo_min, p.sfo_max, p.censored)?;
        }
        Ok(())
    }

    pub fn summary(&self) -> SfoSummary {
        SfoSummary {
            eps: self.eps,
            constants: self.constants.clone(),
            b_star_analytic: self.b_star_analytic,
            b_star_empirical: self.b_star_empirical,
            censored_batches: self.points.iter().filter(|p| p.censored).map(|p| p.b).collect(),
        }
    }
}

/// Sweeps constant-batch SGD over `batch_grid`, recording for each batch size
/// the SFO (`b` times the first step with `|grad f| <= eps`) over `seeds`.
///
/// The learning rate is `constants.eta()`. Batch sizes with a censored seed
/// are kept in the curve but excluded from the empirical argmin; if no batch
/// size is free of censoring the sweep fails with
/// [`Error::PrecisionUnreachable`].
pub fn empirical_cbs(
    problem: &Problem,
    theta0: &ParamVector,
    constants: &TheoryConstants,
    eps: f64,
    batch_grid: &[u64],
    seeds: &[u64],
    max_steps: usize,
) -> Result<SfoCurve> {
    if batch_grid.is_empty() {
        return Err(Error::config("batches", "batch grid is empty"));
    }
    if seeds.is_empty() {
        return Err(Error::config("seeds", "at least one seed is required"));
    }
    if !(eps > 0.0) {
        return Err(Error::config("eps", "target precision must be positive"));
    }
    let mut jobs = Vec::with_capacity(batch_grid.len() * seeds.len());
    for &b in batch_grid {
        if b == 0 || b as usize > problem.n() {
            return Err(Error::config(
                "batches",
                format!("batch size {b} outside 1..={}", problem.n()),
            ));
        }
        let scheduler = SchedulerConfig::constant(b as usize, constants.eta())
            .validate(constants.l(), problem.n())?
            .scheduler;
        for &seed in seeds {
            jobs.push(RunJob {
                theta0: theta0.clone(),
                scheduler: scheduler.clone(),
                config: RunConfig::new(max_steps, seed).with_stop_eps(eps),
            });
        }
    }
    let results = run_many(problem, &jobs);

    let mut points = Vec::with_capacity(batch_grid.len());
    let mut results = results.into_iter();
    for &b in batch_grid {
        let mut sfos = Vec::with_capacity(seeds.len());
        let mut hits = 0;
        for _ in seeds {
            let trace = results.next().expect("one result per job")?;
            match trace.sfo_at_hit() {
                Some(s) => {
                    hits += 1;
                    sfos.push(s);
                }
                None => sfos.push(b * max_steps as u64),
            }
        }
        points.push(SfoPoint {
            b,
            sfo_mean: sfos.iter().map(|&s| s as f64).sum::<f64>() / sfos.len() as f64,
            sfo_min: *sfos.iter().min().unwrap(),
            sfo_max: *sfos.iter().max().unwrap(),
            censored: hits < seeds.len(),
            hits,
            runs: seeds.len(),
        });
    }

    let b_star_empirical = points
        .iter()
        .filter(|p| !p.censored)
        .min_by(|a, b| a.sfo_mean.total_cmp(&b.sfo_mean).then(a.b.cmp(&b.b)))
        .map(|p| p.b);
    if b_star_empirical.is_none() {
        return Err(Error::PrecisionUnreachable { eps, max_steps });
    }
    let analytic = batch_grid
        .iter()
        .filter_map(|&b| sfo_complexity(constants, eps, b).ok().map(|n| (b, n)))
        .collect();
    Ok(SfoCurve {
        eps,
        constants: constants.clone(),
        analytic,
        points,
        b_star_analytic: critical_batch_size(constants, eps),
        b_star_empirical,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(c1: f64, c2: f64) -> TheoryConstants {
        // L = eta = 1 gives C1 = 2 (f0 - f*) and C2 = sigma^2.
        TheoryConstants::new(1.0, c2, c1 / 2.0, 0.0, 1.0).unwrap()
    }

    #[test]
    fn bias_zero_gap_and_scaling() {
        let c = TheoryConstants::new(2.0, 1.0, 1.0, 1.0, 0.5).unwrap();
        assert_eq!(bias_term(&c, &[0.5; 10]).unwrap(), 0.0);
        let c = TheoryConstants::new(2.0, 1.0, 3.0, 1.0, 0.5).unwrap();
        let b10 = bias_term(&c, &[0.5; 10]).unwrap();
        let b20 = bias_term(&c, &[0.5; 20]).unwrap();
        assert!((b10 - c.c1() / 10.0).abs() < 1e-14);
        assert!((b10 / b20 - 2.0).abs() < 1e-14);
    }

    #[test]
    fn variance_constant_case() {
        let c = TheoryConstants::new(2.0, 3.0, 3.0, 1.0, 0.25).unwrap();
        let v = variance_term(&c, &[0.25; 40], &[8; 40]).unwrap();
        assert!((v - c.c2() / 8.0).abs() < 1e-14);
        let c0 = c.with_sigma_sq(0.0).unwrap();
        assert_eq!(variance_term(&c0, &[0.25; 4], &[8; 4]).unwrap(), 0.0);
        assert!(matches!(
            variance_term(&c, &[0.25; 3], &[8; 4]),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(bias_term(&c, &[1.0]).is_err());
        assert!(bias_term(&c, &[]).is_err());
    }

    #[test]
    fn combined_constant_case() {
        let c = TheoryConstants::new(2.0, 3.0, 3.0, 1.0, 0.25).unwrap();
        let t = 100;
        let got = combined_bound(&c, &vec![0.25; t], &vec![4; t]).unwrap();
        let want = (c.c1() / t as f64 + c.c2() / 4.0).sqrt();
        assert!((got - want).abs() < 1e-14);
        let c = TheoryConstants::new(2.0, 0.0, 1.0, 1.0, 0.25).unwrap();
        assert_eq!(combined_bound(&c, &[0.25; 5], &[1; 5]).unwrap(), 0.0);
    }

    #[test]
    fn steps_required_limits() {
        let c = unit(3.0, 0.0);
        let eps = 0.5;
        for b in [1, 10, 1000] {
            assert!((steps_required(&c, eps, b).unwrap() - 3.0 / 0.25).abs() < 1e-12);
        }
        let c = unit(3.0, 2.0);
        let asymptote = 3.0 / 0.25;
        let far = steps_required(&c, eps, 1_000_000).unwrap();
        assert!(far > asymptote && far - asymptote < 1e-3);
        // b = 2 C2 / eps^2 = 16 gives T = 2 C1 / eps^2
        assert!((steps_required(&c, eps, 16).unwrap() - 2.0 * 3.0 / 0.25).abs() < 1e-12);
        assert!((sfo_complexity(&c, eps, 16).unwrap() - 4.0 * 3.0 * 2.0 / eps.powi(4)).abs() < 1e-9);
    }

    #[test]
    fn domain_guard() {
        let c = unit(1.0, 2.0);
        // C2/eps^2 = 8 exactly, so b must be at least 9
        assert_eq!(min_admissible_batch(&c, 0.5), 9);
        assert!(steps_required(&c, 0.5, 8).is_err());
        assert!(sfo_complexity(&c, 0.5, 9).is_ok());
        assert!(steps_required(&c, 0.0, 100).is_err());
    }

    #[test]
    fn critical_batch_scaling() {
        let c = unit(1.0, 2.0);
        let b1 = critical_batch_size(&c, 0.5);
        let b2 = critical_batch_size(&c, 0.25);
        assert!((b2 / b1 - 4.0).abs() < 1e-12);
        assert_eq!(critical_batch_size(&unit(1.0, 0.0), 0.5), 0.0);
    }

    #[test]
    fn expand_schedule_lengths() {
        let s = SchedulerConfig::adaptive_exponential(2, 2.0, 0.1, 1.2, 1.0, 3)
            .validate(1.0, 100)
            .unwrap()
            .scheduler;
        let (etas, bs) = expand_schedule(&s, &[2, 1, 3]).unwrap();
        assert_eq!(bs, vec![2, 2, 4, 8, 8, 8]);
        assert_eq!(etas.len(), 6);
        assert!((etas[5] - 0.1 * 1.44).abs() < 1e-15);
        assert!(expand_schedule(&s, &[1, 1, 1, 1]).is_err());
    }
}
