//! Browser bindings for the demo page in `www/`.
//!
//! Each export returns a flat `Float64Array`; the record layout is given in
//! its doc comment. The pure functions in [`demo`] hold the logic and are
//! what the native tests exercise.

use wasm_bindgen::prelude::*;

pub mod demo {
    use critbatch_core::engine::{run, RunConfig};
    use critbatch_core::theory::{critical_batch_size, min_admissible_batch, sfo_complexity};
    use critbatch_core::{Error, Problem, ProblemKind, ProblemSpec, Result, SchedulerConfig, TheoryConstants};

    /// Analytic SFO curve `N(b)` for `b` from the smallest admissible batch
    /// size up to `b_max`, preceded by `b*` and the number of points.
    ///
    /// Layout: `[b_star, count, b_1, N_1, b_2, N_2, ...]`.
    pub fn sfo_curve(l: f64, sigma_sq: f64, gap: f64, eta: f64, eps: f64, b_max: u64) -> Result<Vec<f64>> {
        let c = TheoryConstants::new(l, sigma_sq, gap, 0.0, eta)?;
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::Domain("eps must be positive".into()));
        }
        let lo = min_admissible_batch(&c, eps).max(1);
        let mut out = vec![critical_batch_size(&c, eps), 0.0];
        // Geometric grid with 2% spacing.
        let mut b = lo;
        while b <= b_max {
            out.push(b as f64);
            out.push(sfo_complexity(&c, eps, b)?);
            b = (b + 1).max((b as f64 * 1.02) as u64);
        }
        out[1] = ((out.len() - 2) / 2) as f64;
        Ok(out)
    }

    fn scheduler(exponential: bool, b0: usize, growth: f64, eta0: f64, gamma: f64, eps0: f64, stages: usize) -> SchedulerConfig {
        if exponential {
            SchedulerConfig::adaptive_exponential(b0, growth, eta0, gamma, eps0, stages)
        } else {
            SchedulerConfig::adaptive_linear(b0, growth.round().max(0.0) as usize, eta0, eps0, stages)
        }
    }

    /// Stage ladder of an adaptive schedule. `growth` is `delta` for the
    /// exponential schedule and `delta_b` for the linear one; `gamma` is
    /// ignored by the linear schedule.
    ///
    /// Layout: `[b_0, eta_0, eps_0, b_1, eta_1, eps_1, ...]`.
    #[allow(clippy::too_many_arguments)]
    pub fn ladder(
        exponential: bool,
        b0: usize,
        growth: f64,
        eta0: f64,
        gamma: f64,
        eps0: f64,
        stages: usize,
        n: usize,
    ) -> Result<Vec<f64>> {
        let s = scheduler(exponential, b0, growth, eta0, gamma, eps0, stages).validate(0.0, n)?.scheduler;
        let mut out = Vec::with_capacity(3 * stages);
        for m in 0..stages {
            let p = s.stage_params(m)?;
            out.extend([p.batch_size as f64, p.lr, p.threshold.unwrap_or(f64::NAN)]);
        }
        Ok(out)
    }

    /// SGD on a generated quadratic or logistic problem with an adaptive
    /// schedule, stopping at the last threshold.
    ///
    /// Layout: `[hit_step or -1, t_1, |grad f|_1, b_1, stage_1, t_2, ...]`,
    /// one record per step. The initial point is recorded as `t = 0`.
    #[allow(clippy::too_many_arguments)]
    pub fn simulate(
        logistic: bool,
        n: usize,
        d: usize,
        noise: f64,
        seed: u64,
        exponential: bool,
        b0: usize,
        growth: f64,
        eta0: f64,
        gamma: f64,
        eps0: f64,
        stages: usize,
        max_steps: usize,
    ) -> Result<Vec<f64>> {
        let kind = if logistic { ProblemKind::Logistic } else { ProblemKind::Quadratic };
        let spec = ProblemSpec::new(kind, n, d, seed).with_noise(noise);
        let problem = Problem::generate(&spec)?;
        let theta0 = spec.initial_point(&problem);
        let l = problem.analytic_l().unwrap_or(0.0);
        let s = scheduler(exponential, b0, growth, eta0, gamma, eps0, stages).validate(l, n)?.scheduler;
        let target = s.stage_params(stages - 1)?.threshold.unwrap_or(0.0);
        let trace = match run(&problem, &theta0, &s, &RunConfig::new(max_steps, seed).with_stop_eps(target)) {
            Ok(t) => t,
            Err(Error::Diverged { trace, .. }) => *trace,
            Err(e) => return Err(e),
        };
        let mut out = Vec::with_capacity(1 + 4 * (trace.records.len() + 1));
        out.push(trace.hit_step.map_or(-1.0, |t| t as f64));
        out.extend([0.0, trace.initial_grad_norm, b0.min(n) as f64, 0.0]);
        for r in &trace.records {
            out.extend([r.t as f64, r.grad_norm.unwrap_or(f64::NAN), r.batch_size as f64, r.stage as f64]);
        }
        Ok(out)
    }
}

fn js(e: critbatch_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// See [`demo::sfo_curve`].
#[wasm_bindgen(js_name = sfoCurve)]
pub fn sfo_curve(l: f64, sigma_sq: f64, gap: f64, eta: f64, eps: f64, b_max: u32) -> Result<Vec<f64>, JsError> {
    demo::sfo_curve(l, sigma_sq, gap, eta, eps, b_max as u64).map_err(js)
}

/// See [`demo::ladder`].
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn ladder(
    exponential: bool,
    b0: u32,
    growth: f64,
    eta0: f64,
    gamma: f64,
    eps0: f64,
    stages: u32,
    n: u32,
) -> Result<Vec<f64>, JsError> {
    demo::ladder(exponential, b0 as usize, growth, eta0, gamma, eps0, stages as usize, n as usize).map_err(js)
}

/// See [`demo::simulate`].
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn simulate(
    logistic: bool,
    n: u32,
    d: u32,
    noise: f64,
    seed: u32,
    exponential: bool,
    b0: u32,
    growth: f64,
    eta0: f64,
    gamma: f64,
    eps0: f64,
    stages: u32,
    max_steps: u32,
) -> Result<Vec<f64>, JsError> {
    demo::simulate(
        logistic,
        n as usize,
        d as usize,
        noise,
        seed as u64,
        exponential,
        b0 as usize,
        growth,
        eta0,
        gamma,
        eps0,
        stages as usize,
        max_steps as usize,
    )
    .map_err(js)
}
