//! The `run`, `sweep` and `compare` commands.
//!
//! Every command validates the whole configuration before any SGD step is
//! taken, runs the seeds (in parallel when available), and then writes its
//! files in seed order from a single thread so the output bytes depend only
//! on the configuration.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use critbatch_core::engine::{run_many, RunJob, RunTrace};
use critbatch_core::schedulers::Warning;
use critbatch_core::theory::{critical_batch_size, empirical_cbs, SfoSummary};
use critbatch_core::{
    estimate_constants, problems::estimate_smoothness, Error, ParamVector, Problem, Scheduler, SfoCurve,
};
use serde::Serialize;

use crate::config::{ExperimentConfig, Overrides};
use crate::CliError;

/// A config whose problem has been generated and whose scheduler has been
/// validated against it.
pub struct Prepared {
    pub config: ExperimentConfig,
    pub problem: Problem,
    pub theta0: ParamVector,
    pub scheduler: Scheduler,
    pub warnings: Vec<Warning>,
}

pub fn prepare(mut config: ExperimentConfig, overrides: &Overrides) -> Result<Prepared, CliError> {
    config.apply(overrides);
    config.validate_run()?;
    let problem = Problem::generate(&config.problem)?;
    let theta0 = config.problem.initial_point(&problem);
    let smoothness = match problem.analytic_l() {
        Some(l) => l,
        None => estimate_smoothness(&problem, &theta0, 32, config.problem.seed)?,
    };
    let validated = config.scheduler.validate(smoothness, problem.n())?;
    Ok(Prepared {
        config,
        problem,
        theta0,
        scheduler: validated.scheduler,
        warnings: validated.warnings,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub steps: usize,
    pub final_loss: f64,
    pub min_grad_norm: f64,
    pub total_sfo: u64,
    pub monitor_grad_evals: u64,
    pub stages_completed: usize,
    pub final_stage: usize,
    pub hit_step: Option<usize>,
    pub sfo_at_hit: Option<u64>,
    pub batch_capped: bool,
    pub diverged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageRow {
    pub stage: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub threshold: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub label: String,
    pub scheduler: String,
    pub stop_eps: Option<f64>,
    pub stages: Vec<StageRow>,
    pub seeds: Vec<SeedSummary>,
}

struct SeedOutcome {
    seed: u64,
    trace: RunTrace,
    divergence: Option<(usize, String)>,
}

fn run_seeds(p: &Prepared) -> Result<Vec<SeedOutcome>, CliError> {
    let jobs: Vec<RunJob> = p
        .config
        .run
        .seeds
        .iter()
        .map(|&seed| RunJob {
            theta0: p.theta0.clone(),
            scheduler: p.scheduler.clone(),
            config: p.config.run_config(seed),
        })
        .collect();
    let mut out = Vec::with_capacity(jobs.len());
    for (seed, result) in p.config.run.seeds.iter().zip(run_many(&p.problem, &jobs)) {
        let outcome = match result {
            Ok(trace) => SeedOutcome {
                seed: *seed,
                trace,
                divergence: None,
            },
            Err(Error::Diverged { step, reason, trace }) => SeedOutcome {
                seed: *seed,
                trace: *trace,
                divergence: Some((step, reason)),
            },
            Err(e) => return Err(e.into()),
        };
        out.push(outcome);
    }
    Ok(out)
}

fn stage_rows(s: &Scheduler) -> Vec<StageRow> {
    (0..s.num_stages())
        .map(|m| {
            let p = s.stage_params(m).expect("stage index in range");
            StageRow {
                stage: m,
                batch_size: p.batch_size,
                lr: p.lr,
                threshold: p.threshold,
            }
        })
        .collect()
}

fn summarize(o: &SeedOutcome) -> SeedSummary {
    let t = &o.trace;
    SeedSummary {
        seed: o.seed,
        steps: t.steps(),
        final_loss: t.final_loss(),
        min_grad_norm: t.min_grad_norm(),
        total_sfo: t.total_sfo(),
        monitor_grad_evals: t.monitor_grad_evals,
        stages_completed: t.stages_completed,
        final_stage: t.final_stage(),
        hit_step: t.hit_step,
        sfo_at_hit: t.sfo_at_hit(),
        batch_capped: t.batch_capped,
        diverged: o.divergence.is_some(),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(std::io::Error::from)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_seed_table(path: &Path, rows: &[SeedSummary]) -> Result<(), CliError> {
    let mut w = create(path)?;
    writeln!(
        w,
        "seed,steps,final_loss,min_grad_norm,total_sfo,monitor_grad_evals,stages_completed,hit_step,sfo_at_hit,diverged"
    )?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            r.seed,
            r.steps,
            r.final_loss,
            r.min_grad_norm,
            r.total_sfo,
            r.monitor_grad_evals,
            r.stages_completed,
            opt(r.hit_step),
            opt(r.sfo_at_hit),
            r.diverged
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Writes traces and summaries for one prepared experiment into `dir`.
fn write_run(dir: &Path, p: &Prepared, outcomes: &[SeedOutcome]) -> Result<RunSummary, CliError> {
    fs::create_dir_all(dir)?;
    for o in outcomes {
        let mut w = create(&dir.join(format!("trace_seed{}.csv", o.seed)))?;
        o.trace.write_csv(&mut w, p.config.output.all_steps)?;
        w.flush()?;
    }
    let summary = RunSummary {
        label: p.config.label(),
        scheduler: p.config.scheduler.kind.name().to_string(),
        stop_eps: p.config.run.stop_eps,
        stages: stage_rows(&p.scheduler),
        seeds: outcomes.iter().map(summarize).collect(),
    };
    write_seed_table(&dir.join("summary.csv"), &summary.seeds)?;
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

fn first_divergence(label: &str, outcomes: &[SeedOutcome]) -> Option<CliError> {
    outcomes.iter().find_map(|o| {
        o.divergence.as_ref().map(|(step, reason)| CliError::Diverged {
            label: label.to_string(),
            seed: o.seed,
            step: *step,
            reason: reason.clone(),
        })
    })
}

fn report_warnings(p: &Prepared) {
    for w in &p.warnings {
        eprintln!("warning ({}): {w}", p.config.label());
    }
}

/// `run`: one trace per seed plus `summary.csv` / `summary.json`.
///
/// Traces of every seed, including partial traces of diverged seeds, are
/// written before a divergence is reported. With `stop_eps` set, failing to
/// reach it on every seed is reported as unreachable precision.
pub fn cmd_run(config: ExperimentConfig, overrides: &Overrides) -> Result<RunSummary, CliError> {
    let p = prepare(config, overrides)?;
    report_warnings(&p);
    let outcomes = run_seeds(&p)?;
    let summary = write_run(&p.config.output.dir, &p, &outcomes)?;
    if let Some(e) = first_divergence(&summary.label, &outcomes) {
        return Err(e);
    }
    if let Some(eps) = p.config.run.stop_eps {
        if summary.seeds.iter().all(|s| s.hit_step.is_none()) {
            return Err(CliError::Unreachable(format!(
                "no seed reached |grad f| <= {eps} within {} steps",
                p.config.run.max_steps
            )));
        }
    }
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepReport {
    #[serde(flatten)]
    pub summary: SfoSummary,
    pub batches: Vec<u64>,
    pub seeds: Vec<u64>,
    pub max_steps: usize,
}

/// `sweep`: constant-batch SFO curve with analytic and empirical critical
/// batch sizes. `batches` overrides `sweep.batches`.
pub fn cmd_sweep(
    config: ExperimentConfig,
    batches: Option<Vec<u64>>,
    overrides: &Overrides,
) -> Result<(SfoCurve, SweepReport), CliError> {
    if config.sweep.is_none() {
        return Err(CliError::Config("sweep: the [sweep] table is required".into()));
    }
    let p = prepare(config, overrides)?;
    let spec = p.config.sweep.clone().expect("checked above");
    let grid = batches
        .or(spec.batches.clone())
        .ok_or_else(|| CliError::Config("sweep: no batch grid (use --batches or sweep.batches)".into()))?;
    if grid.is_empty() {
        return Err(CliError::Config("sweep: batch grid is empty".into()));
    }
    if let Some(&b) = grid.iter().find(|&&b| b == 0 || b as usize > p.problem.n()) {
        return Err(CliError::Config(format!("sweep: batch size {b} outside 1..={}", p.problem.n())));
    }
    let eta = spec.eta.or(p.config.scheduler.eta0).ok_or_else(|| {
        CliError::Config("sweep: learning rate missing (set sweep.eta or scheduler.eta0)".into())
    })?;
    let constants = estimate_constants(&p.problem, &p.theta0, eta, spec.probes, p.config.problem.seed)?;
    let eps = match (spec.eps, spec.b_star) {
        (Some(e), _) => e,
        (None, Some(b)) => (2.0 * constants.c2() / b).sqrt(),
        (None, None) => unreachable!("validated"),
    };
    if !(eps > 0.0) {
        return Err(CliError::Config("sweep: problem has zero gradient variance, b_star cannot set eps".into()));
    }
    let curve = empirical_cbs(
        &p.problem,
        &p.theta0,
        &constants,
        eps,
        &grid,
        &p.config.run.seeds,
        p.config.run.max_steps,
    )?;
    debug_assert_eq!(curve.b_star_analytic, critical_batch_size(&constants, eps));

    let dir = &p.config.output.dir;
    fs::create_dir_all(dir)?;
    let mut w = create(&dir.join("sfo_curve.csv"))?;
    curve.write_csv(&mut w)?;
    w.flush()?;
    let report = SweepReport {
        summary: curve.summary(),
        batches: grid,
        seeds: p.config.run.seeds.clone(),
        max_steps: p.config.run.max_steps,
    };
    write_json(&dir.join("sfo_summary.json"), &report)?;
    Ok((curve, report))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankRow {
    pub label: String,
    pub scheduler: String,
    pub hits: usize,
    pub runs: usize,
    /// Median over seeds, with seeds that missed the target counted as
    /// infinite. `None` when the median itself is infinite.
    pub median_steps_to_eps: Option<f64>,
    pub median_sfo_to_eps: Option<f64>,
    pub rank_steps: usize,
    pub rank_sfo: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompareReport {
    pub target_eps: f64,
    pub seeds: Vec<u64>,
    pub ranking: Vec<RankRow>,
}

/// Median of values where `None` stands for +infinity.
pub fn median_with_infinity(values: &[Option<u64>]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v: Vec<f64> = values.iter().map(|x| x.map_or(f64::INFINITY, |x| x as f64)).collect();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    let m = if k % 2 == 1 { v[k / 2] } else { 0.5 * (v[k / 2 - 1] + v[k / 2]) };
    m.is_finite().then_some(m)
}

/// Competition ranking (1, 1, 3, ...) by ascending key, infinite last.
fn ranks(keys: &[Option<f64>]) -> Vec<usize> {
    let val = |k: &Option<f64>| k.unwrap_or(f64::INFINITY);
    keys.iter()
        .map(|k| 1 + keys.iter().filter(|o| val(o) < val(k)).count())
        .collect()
}

fn unique_labels(configs: &[ExperimentConfig]) -> Vec<String> {
    let mut out: Vec<String> = Vec::with_capacity(configs.len());
    for c in configs {
        let base = c.label();
        let mut label = base.clone();
        let mut k = 2;
        while out.contains(&label) {
            label = format!("{base}-{k}");
            k += 1;
        }
        out.push(label);
    }
    out
}

/// `compare`: runs every config on the shared problem and seeds, writes each
/// one's traces under `<out>/<label>/`, and ranks them by steps and SFO to
/// the common `run.stop_eps`. The output directory of the first config is
/// used.
pub fn cmd_compare(configs: Vec<ExperimentConfig>, overrides: &Overrides) -> Result<CompareReport, CliError> {
    if configs.len() < 2 {
        return Err(CliError::Config("compare: at least two configs are required".into()));
    }
    let labels = unique_labels(&configs);
    let mut prepared = Vec::with_capacity(configs.len());
    for c in configs {
        prepared.push(prepare(c, overrides)?);
    }
    let first = &prepared[0].config;
    let target = first
        .run
        .stop_eps
        .ok_or_else(|| CliError::Config("compare: run.stop_eps is required as the common target".into()))?;
    for p in &prepared[1..] {
        let c = &p.config;
        if c.problem != first.problem {
            return Err(CliError::Config(format!("compare: {} uses a different problem", c.label())));
        }
        if c.run.seeds != first.run.seeds {
            return Err(CliError::Config(format!("compare: {} uses different seeds", c.label())));
        }
        if c.run.stop_eps != Some(target) {
            return Err(CliError::Config(format!("compare: {} uses a different stop_eps", c.label())));
        }
    }
    let root: PathBuf = first.output.dir.clone();
    let seeds = first.run.seeds.clone();

    let mut all = Vec::with_capacity(prepared.len());
    for p in &prepared {
        report_warnings(p);
        all.push(run_seeds(p)?);
    }
    let mut rows = Vec::with_capacity(prepared.len());
    for ((p, label), outcomes) in prepared.iter().zip(&labels).zip(&all) {
        let summary = write_run(&root.join(label), p, outcomes)?;
        let steps: Vec<Option<u64>> = summary.seeds.iter().map(|s| s.hit_step.map(|t| t as u64)).collect();
        let sfo: Vec<Option<u64>> = summary.seeds.iter().map(|s| s.sfo_at_hit).collect();
        rows.push(RankRow {
            label: label.clone(),
            scheduler: summary.scheduler,
            hits: steps.iter().flatten().count(),
            runs: steps.len(),
            median_steps_to_eps: median_with_infinity(&steps),
            median_sfo_to_eps: median_with_infinity(&sfo),
            rank_steps: 0,
            rank_sfo: 0,
        });
    }
    let by_steps = ranks(&rows.iter().map(|r| r.median_steps_to_eps).collect::<Vec<_>>());
    let by_sfo = ranks(&rows.iter().map(|r| r.median_sfo_to_eps).collect::<Vec<_>>());
    for ((r, a), b) in rows.iter_mut().zip(by_steps).zip(by_sfo) {
        r.rank_steps = a;
        r.rank_sfo = b;
    }

    let mut w = create(&root.join("ranking.csv"))?;
    writeln!(w, "label,scheduler,hits,runs,median_steps_to_eps,median_sfo_to_eps,rank_steps,rank_sfo")?;
    for r in &rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.label,
            r.scheduler,
            r.hits,
            r.runs,
            opt(r.median_steps_to_eps),
            opt(r.median_sfo_to_eps),
            r.rank_steps,
            r.rank_sfo
        )?;
    }
    w.flush()?;
    let report = CompareReport {
        target_eps: target,
        seeds,
        ranking: rows,
    };
    write_json(&root.join("ranking.json"), &report)?;

    for (label, outcomes) in labels.iter().zip(&all) {
        if let Some(e) = first_divergence(label, outcomes) {
            return Err(e);
        }
    }
    if report.ranking.iter().all(|r| r.hits == 0) {
        return Err(CliError::Unreachable(format!(
            "no scheduler reached |grad f| <= {target} on any seed"
        )));
    }
    Ok(report)
}
