//! Finite-sum objectives `f(theta) = (1/n) sum_i f_i(theta)` with exact
//! per-sample and full gradients.
//!
//! Three families are provided:
//!
//! - **Quadratic** least squares, `f_i = 1/2 (a_i . theta - y_i)^2`. The
//!   smoothness constant (largest eigenvalue of `(1/n) A^T A`) and the minimum
//!   value are computed exactly at construction.
//! - **Logistic** regression with an l2 penalty, labels in `{-1, +1}`. The
//!   global smoothness bound `lambda_max(A^T A) / (4n) + l2` is recorded as
//!   `analytic_l`; the minimum is left to the descent oracle.
//! - **TinyMlp**, a one-hidden-layer tanh network with squared loss. Neither
//!   constant is known; both are estimated.

mod constants;
mod model;
mod vector;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, DATA_STREAM, INIT_STREAM};
use model::MlpShape;

pub use constants::{estimate_constants, estimate_constants_with, estimate_smoothness, DescentOracle, TheoryConstants};
pub use vector::ParamVector;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    Quadratic,
    Logistic,
    TinyMlp,
}

impl ProblemKind {
    pub fn name(&self) -> &'static str {
        match self {
            ProblemKind::Quadratic => "quadratic",
            ProblemKind::Logistic => "logistic",
            ProblemKind::TinyMlp => "tiny_mlp",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Model {
    Quadratic,
    Logistic { l2: f64 },
    Mlp(MlpShape),
}

/// An immutable finite-sum objective.
#[derive(Clone, Debug)]
pub struct Problem {
    kind: ProblemKind,
    n: usize,
    d: usize,
    feature_dim: usize,
    /// `n x feature_dim`, row-major.
    features: Vec<f64>,
    targets: Vec<f64>,
    model: Model,
    analytic_l: Option<f64>,
    analytic_fstar: Option<f64>,
    minimizer: Option<ParamVector>,
}

fn flatten(rows: Vec<Vec<f64>>, targets: &[f64]) -> Result<(usize, usize, Vec<f64>)> {
    let n = rows.len();
    if n == 0 {
        return Err(Error::config("n", "at least one sample is required"));
    }
    if targets.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: targets.len(),
        });
    }
    let p = rows[0].len();
    if p == 0 {
        return Err(Error::config("d", "feature dimension must be positive"));
    }
    let mut flat = Vec::with_capacity(n * p);
    for row in rows {
        if row.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                found: row.len(),
            });
        }
        flat.extend(row);
    }
    if flat.iter().chain(targets).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("problem data"));
    }
    Ok((n, p, flat))
}

fn design_matrix(n: usize, p: usize, features: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(n, p, features)
}

fn largest_eigenvalue_of_gram(a: &DMatrix<f64>, n: usize) -> f64 {
    let gram = a.transpose() * a / n as f64;
    gram.symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

impl Problem {
    /// Least-squares objective from explicit rows `a_i` and targets `y_i`.
    pub fn quadratic(rows: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self> {
        let (n, p, features) = flatten(rows, &targets)?;
        let a = design_matrix(n, p, &features);
        let l = largest_eigenvalue_of_gram(&a, n);

        let svd = a.clone().svd(true, true);
        let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
        let y = DVector::from_column_slice(&targets);
        let solution = svd
            .solve(&y, 1e-12 * smax.max(f64::MIN_POSITIVE))
            .map_err(|e| Error::Domain(format!("least-squares solve failed: {e}")))?;
        let minimizer = ParamVector::new(solution.iter().cloned().collect())?;

        let mut problem = Problem {
            kind: ProblemKind::Quadratic,
            n,
            d: p,
            feature_dim: p,
            features,
            targets,
            model: Model::Quadratic,
            analytic_l: Some(l),
            analytic_fstar: None,
            minimizer: None,
        };
        let fstar = problem.loss(&minimizer)?.max(0.0);
        problem.analytic_fstar = Some(fstar);
        problem.minimizer = Some(minimizer);
        Ok(problem)
    }

    /// l2-regularised logistic regression; `labels` must be `-1` or `+1`.
    pub fn logistic(rows: Vec<Vec<f64>>, labels: Vec<f64>, l2: f64) -> Result<Self> {
        if !(l2 >= 0.0 && l2.is_finite()) {
            return Err(Error::config("l2", "must be a finite nonnegative number"));
        }
        if labels.iter().any(|&y| y != 1.0 && y != -1.0) {
            return Err(Error::config("labels", "logistic labels must be -1 or +1"));
        }
        let (n, p, features) = flatten(rows, &labels)?;
        let a = design_matrix(n, p, &features);
        let l = 0.25 * largest_eigenvalue_of_gram(&a, n) + l2;
        Ok(Problem {
            kind: ProblemKind::Logistic,
            n,
            d: p,
            feature_dim: p,
            features,
            targets: labels,
            model: Model::Logistic { l2 },
            analytic_l: Some(l),
            analytic_fstar: None,
            minimizer: None,
        })
    }

    /// One-hidden-layer tanh regression network with `hidden` units.
    pub fn tiny_mlp(rows: Vec<Vec<f64>>, targets: Vec<f64>, hidden: usize) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::config("hidden", "must be at least 1"));
        }
        let (n, p, features) = flatten(rows, &targets)?;
        let shape = MlpShape { inputs: p, hidden };
        Ok(Problem {
            kind: ProblemKind::TinyMlp,
            n,
            d: shape.param_dim(),
            feature_dim: p,
            features,
            targets,
            model: Model::Mlp(shape),
            analytic_l: None,
            analytic_fstar: None,
            minimizer: None,
        })
    }

    /// Builds a seeded synthetic instance.
    pub fn generate(spec: &ProblemSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = stream_rng(spec.seed, DATA_STREAM);
        let p = spec.d;
        let draw_row = |rng: &mut crate::rng::StreamRng| -> Vec<f64> {
            (0..p).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
        };
        let n_distinct = if spec.identical_samples { 1 } else { spec.n };
        let draw_design = |rng: &mut crate::rng::StreamRng| -> Result<Vec<Vec<f64>>> {
            let rows: Vec<Vec<f64>> = (0..n_distinct).map(|_| draw_row(rng)).collect();
            if spec.whiten {
                whiten(rows)
            } else {
                Ok(rows)
            }
        };

        match spec.kind {
            ProblemKind::Quadratic => {
                let truth = draw_row(&mut rng);
                let mut rows = draw_design(&mut rng)?;
                let mut targets: Vec<f64> = rows
                    .iter()
                    .map(|a| vector::dot(a, &truth) + spec.noise * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                replicate(&mut rows, &mut targets, spec.n);
                Problem::quadratic(rows, targets)
            }
            ProblemKind::Logistic => {
                let truth = draw_row(&mut rng);
                let mut rows = draw_design(&mut rng)?;
                let mut labels: Vec<f64> = rows
                    .iter()
                    .map(|a| {
                        let score = vector::dot(a, &truth) + spec.noise * rng.sample::<f64, _>(StandardNormal);
                        if score >= 0.0 {
                            1.0
                        } else {
                            -1.0
                        }
                    })
                    .collect();
                replicate(&mut rows, &mut labels, spec.n);
                Problem::logistic(rows, labels, spec.l2)
            }
            ProblemKind::TinyMlp => {
                if spec.whiten {
                    return Err(Error::config("problem.whiten", "only supported for quadratic and logistic"));
                }
                let shape = MlpShape {
                    inputs: p,
                    hidden: spec.hidden,
                };
                let teacher: Vec<f64> = (0..shape.param_dim())
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let mut hidden = vec![0.0; spec.hidden];
                let mut rows = Vec::with_capacity(spec.n);
                let mut targets = Vec::with_capacity(spec.n);
                for _ in 0..n_distinct {
                    let x = draw_row(&mut rng);
                    let eps: f64 = rng.sample(StandardNormal);
                    targets.push(shape.forward(&teacher, &x, &mut hidden) + spec.noise * eps);
                    rows.push(x);
                }
                replicate(&mut rows, &mut targets, spec.n);
                Problem::tiny_mlp(rows, targets, spec.hidden)
            }
        }
    }

    pub fn kind(&self) -> ProblemKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Parameter dimension.
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn analytic_l(&self) -> Option<f64> {
        self.analytic_l
    }

    pub fn analytic_fstar(&self) -> Option<f64> {
        self.analytic_fstar
    }

    /// Least-squares solution, for quadratic problems.
    pub fn minimizer(&self) -> Option<&ParamVector> {
        self.minimizer.as_ref()
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn target(&self, i: usize) -> f64 {
        self.targets[i]
    }

    fn check_dim(&self, theta: &ParamVector) -> Result<()> {
        if theta.dim() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                found: theta.dim(),
            });
        }
        Ok(())
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.n {
            return Err(Error::SampleIndexOutOfRange { index: i, n: self.n });
        }
        Ok(())
    }

    fn raw_sample_loss(&self, theta: &[f64], i: usize) -> f64 {
        let a = self.features(i);
        let y = self.targets[i];
        match self.model {
            Model::Quadratic => model::quadratic_loss(theta, a, y),
            Model::Logistic { l2 } => model::logistic_loss(theta, a, y, l2),
            Model::Mlp(shape) => model::mlp_loss(shape, theta, a, y),
        }
    }

    /// Adds `weight * grad f_i(theta)` to `out`. No bounds checks.
    pub(crate) fn add_sample_grad(&self, theta: &[f64], i: usize, weight: f64, out: &mut [f64]) {
        let a = self.features(i);
        let y = self.targets[i];
        match self.model {
            Model::Quadratic => model::quadratic_grad(theta, a, y, weight, out),
            Model::Logistic { l2 } => model::logistic_grad(theta, a, y, l2, weight, out),
            Model::Mlp(shape) => model::mlp_grad(shape, theta, a, y, weight, out),
        }
    }

    pub fn sample_loss(&self, theta: &ParamVector, i: usize) -> Result<f64> {
        self.check_dim(theta)?;
        self.check_index(i)?;
        Ok(self.raw_sample_loss(theta.as_slice(), i))
    }

    /// Empirical loss `(1/n) sum_i f_i(theta)`.
    pub fn loss(&self, theta: &ParamVector) -> Result<f64> {
        self.check_dim(theta)?;
        let t = theta.as_slice();
        let total: f64 = (0..self.n).map(|i| self.raw_sample_loss(t, i)).sum();
        Ok(total / self.n as f64)
    }

    pub fn per_sample_grad(&self, theta: &ParamVector, i: usize) -> Result<ParamVector> {
        self.check_dim(theta)?;
        self.check_index(i)?;
        let mut out = vec![0.0; self.d];
        self.add_sample_grad(theta.as_slice(), i, 1.0, &mut out);
        Ok(ParamVector::from_raw(out))
    }

    /// Full gradient `(1/n) sum_i grad f_i(theta)`.
    pub fn full_grad(&self, theta: &ParamVector) -> Result<ParamVector> {
        self.check_dim(theta)?;
        let mut out = vec![0.0; self.d];
        self.accumulate_full_grad(theta.as_slice(), &mut out);
        Ok(ParamVector::from_raw(out))
    }

    pub(crate) fn accumulate_full_grad(&self, theta: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let w = 1.0 / self.n as f64;
        for i in 0..self.n {
            self.add_sample_grad(theta, i, w, out);
        }
    }

    pub fn loss_and_grad(&self, theta: &ParamVector) -> Result<(f64, ParamVector)> {
        Ok((self.loss(theta)?, self.full_grad(theta)?))
    }

    /// Exact empirical gradient variance `(1/n) sum_i |grad f_i - grad f|^2`.
    pub fn grad_variance(&self, theta: &ParamVector) -> Result<f64> {
        let mean = self.full_grad(theta)?;
        let mut g = vec![0.0; self.d];
        let mut total = 0.0;
        for i in 0..self.n {
            g.iter_mut().for_each(|v| *v = 0.0);
            self.add_sample_grad(theta.as_slice(), i, 1.0, &mut g);
            total += g
                .iter()
                .zip(mean.as_slice())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        }
        Ok(total / self.n as f64)
    }
}

/// `A -> A (A^T A / n)^{-1/2}`.
fn whiten(rows: Vec<Vec<f64>>) -> Result<Vec<Vec<f64>>> {
    let n = rows.len();
    let p = rows[0].len();
    if n < p {
        return Err(Error::config("problem.whiten", "needs at least d distinct samples"));
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let a = design_matrix(n, p, &flat);
    let eig = (a.transpose() * &a / n as f64).symmetric_eigen();
    if eig.eigenvalues.iter().any(|&v| !(v > 1e-12)) {
        return Err(Error::config("problem.whiten", "feature covariance is singular"));
    }
    let inv_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v.sqrt()));
    let w = &eig.eigenvectors * inv_sqrt * eig.eigenvectors.transpose();
    let white = a * w;
    Ok(white.row_iter().map(|r| r.iter().cloned().collect()).collect())
}

fn replicate(rows: &mut Vec<Vec<f64>>, targets: &mut Vec<f64>, n: usize) {
    while rows.len() < n {
        rows.push(rows[0].clone());
        targets.push(targets[0]);
    }
}

fn default_hidden() -> usize {
    4
}

fn default_l2() -> f64 {
    1e-3
}

/// Generator description for a synthetic problem instance.
///
/// `d` is the feature dimension. For quadratic and logistic problems it is
/// also the parameter dimension; the network has `hidden * (d + 2) + 1`
/// parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub n: usize,
    pub d: usize,
    pub seed: u64,
    #[serde(default)]
    pub noise: f64,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_l2")]
    pub l2: f64,
    /// Every sample is a copy of the first one, so the gradient variance is 0.
    #[serde(default)]
    pub identical_samples: bool,
    /// Linearly transform the feature rows so that `(1/n) A^T A = I`, which
    /// makes every Hessian eigenvalue of the quadratic equal to 1.
    #[serde(default)]
    pub whiten: bool,
    /// Standard deviation of the Gaussian initial point. Defaults to 0 for the
    /// convex kinds and 0.5 for the network.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_scale: Option<f64>,
}

impl ProblemSpec {
    pub fn new(kind: ProblemKind, n: usize, d: usize, seed: u64) -> Self {
        ProblemSpec {
            kind,
            n,
            d,
            seed,
            noise: 0.0,
            hidden: default_hidden(),
            l2: default_l2(),
            identical_samples: false,
            whiten: false,
            init_scale: None,
        }
    }

    pub fn with_noise(mut self, noise: f64) -> Self {
        self.noise = noise;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::config("problem.n", "must be at least 1"));
        }
        if self.d == 0 {
            return Err(Error::config("problem.d", "must be at least 1"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::config("problem.noise", "must be finite and nonnegative"));
        }
        if self.hidden == 0 {
            return Err(Error::config("problem.hidden", "must be at least 1"));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::config("problem.l2", "must be finite and nonnegative"));
        }
        if let Some(s) = self.init_scale {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::config("problem.init_scale", "must be finite and nonnegative"));
            }
        }
        Ok(())
    }

    pub fn init_scale(&self) -> f64 {
        self.init_scale.unwrap_or(match self.kind {
            ProblemKind::TinyMlp => 0.5,
            _ => 0.0,
        })
    }

    /// Seeded initial point for `problem` (which must come from this spec).
    pub fn initial_point(&self, problem: &Problem) -> ParamVector {
        let scale = self.init_scale();
        if scale == 0.0 {
            return ParamVector::zeros(problem.d());
        }
        let mut rng = stream_rng(self.seed, INIT_STREAM);
        ParamVector::from_raw(
            (0..problem.d())
                .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                .collect(),
        )
    }
}
