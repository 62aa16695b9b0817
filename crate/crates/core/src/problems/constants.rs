use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{ParamVector, Problem};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, PROBE_STREAM};

/// Constants entering the constant batch/learning rate bound
/// `sqrt(C1 / T + C2 / b)`. `C1` and `C2` are always derived from the other
/// fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawConstants", into = "RawConstants")]
pub struct TheoryConstants {
    l: f64,
    sigma_sq: f64,
    f_theta0: f64,
    f_star: f64,
    eta: f64,
}

#[derive(Serialize, Deserialize)]
struct RawConstants {
    #[serde(rename = "L")]
    l: f64,
    sigma_sq: f64,
    f_theta0: f64,
    f_star: f64,
    eta: f64,
    #[serde(rename = "C1", default, skip_deserializing)]
    c1: f64,
    #[serde(rename = "C2", default, skip_deserializing)]
    c2: f64,
}

impl TryFrom<RawConstants> for TheoryConstants {
    type Error = Error;

    fn try_from(raw: RawConstants) -> Result<Self> {
        TheoryConstants::new(raw.l, raw.sigma_sq, raw.f_theta0, raw.f_star, raw.eta)
    }
}

impl From<TheoryConstants> for RawConstants {
    fn from(c: TheoryConstants) -> Self {
        RawConstants {
            l: c.l,
            sigma_sq: c.sigma_sq,
            f_theta0: c.f_theta0,
            f_star: c.f_star,
            eta: c.eta,
            c1: c.c1(),
            c2: c.c2(),
        }
    }
}

impl TheoryConstants {
    pub fn new(l: f64, sigma_sq: f64, f_theta0: f64, f_star: f64, eta: f64) -> Result<Self> {
        if !(l > 0.0 && l.is_finite()) {
            return Err(Error::config("L", "smoothness constant must be positive and finite"));
        }
        if !(sigma_sq >= 0.0 && sigma_sq.is_finite()) {
            return Err(Error::config("sigma_sq", "must be nonnegative and finite"));
        }
        if !(f_theta0.is_finite() && f_star.is_finite()) {
            return Err(Error::NonFinite("loss values"));
        }
        if f_theta0 < f_star {
            return Err(Error::config("f_star", "f(theta0) must be at least f*"));
        }
        if !(eta > 0.0) {
            return Err(Error::config("eta", "must be positive"));
        }
        if eta * l >= 2.0 {
            return Err(Error::StepSizeTooLarge {
                eta,
                limit: 2.0 / l,
            });
        }
        Ok(TheoryConstants {
            l,
            sigma_sq,
            f_theta0,
            f_star,
            eta,
        })
    }

    pub fn l(&self) -> f64 {
        self.l
    }

    pub fn sigma_sq(&self) -> f64 {
        self.sigma_sq
    }

    pub fn f_theta0(&self) -> f64 {
        self.f_theta0
    }

    pub fn f_star(&self) -> f64 {
        self.f_star
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// `2 (f(theta0) - f*) / (eta (2 - L eta))`
    pub fn c1(&self) -> f64 {
        2.0 * (self.f_theta0 - self.f_star) / (self.eta * (2.0 - self.l * self.eta))
    }

    /// `L eta sigma^2 / (2 - L eta)`
    pub fn c2(&self) -> f64 {
        self.l * self.eta * self.sigma_sq / (2.0 - self.l * self.eta)
    }

    pub fn with_sigma_sq(&self, sigma_sq: f64) -> Result<Self> {
        TheoryConstants::new(self.l, sigma_sq, self.f_theta0, self.f_star, self.eta)
    }

    pub fn with_eta(&self, eta: f64) -> Result<Self> {
        TheoryConstants::new(self.l, self.sigma_sq, self.f_theta0, self.f_star, eta)
    }
}

/// Deterministic full-gradient descent used as the `f*` oracle and to lay
/// out the variance probe points.
///
/// The step is `1/L`, halved while the sufficient-decrease condition fails,
/// which only happens when `L` is an underestimate.
#[derive(Clone, Debug, PartialEq)]
pub struct DescentOracle {
    pub grad_tol: f64,
    pub max_iters: usize,
}

impl Default for DescentOracle {
    fn default() -> Self {
        DescentOracle {
            grad_tol: 1e-10,
            max_iters: 1_000_000,
        }
    }
}

struct DescentPath {
    min_loss: f64,
    checkpoints: Vec<ParamVector>,
}

impl DescentOracle {
    /// Iterates from `theta0`, keeping iterates 0, 1, 2, 4, 8, ... until
    /// `checkpoints` of them are collected. Stops early once the checkpoints
    /// are complete if `need_min` is false.
    fn descend(
        &self,
        problem: &Problem,
        theta0: &ParamVector,
        l: f64,
        checkpoints: usize,
        need_min: bool,
    ) -> Result<DescentPath> {
        let mut theta = theta0.clone();
        let (mut loss, mut grad) = problem.loss_and_grad(&theta)?;
        let mut path = DescentPath {
            min_loss: loss,
            checkpoints: vec![theta.clone()],
        };
        let mut next_mark = 1usize;
        let mut iter = 0usize;
        while iter < self.max_iters {
            let gsq = grad.norm_sq();
            if gsq.sqrt() <= self.grad_tol {
                break;
            }
            if !need_min && path.checkpoints.len() >= checkpoints {
                break;
            }
            let mut step = 1.0 / l;
            let mut trial;
            let mut trial_loss;
            let mut halvings = 0;
            let accepted = loop {
                trial = theta.clone();
                trial.axpy(-step, &grad);
                trial_loss = problem.loss(&trial)?;
                if trial_loss <= loss - 0.5 * step * gsq {
                    break true;
                }
                if halvings >= 60 {
                    break false;
                }
                step *= 0.5;
                halvings += 1;
            };
            // Stop once the loss can no longer strictly decrease at working precision.
            if !accepted || !trial_loss.is_finite() || trial_loss >= loss {
                break;
            }
            theta = trial;
            loss = trial_loss;
            grad = problem.full_grad(&theta)?;
            iter += 1;
            path.min_loss = path.min_loss.min(loss);
            if iter == next_mark && path.checkpoints.len() < checkpoints {
                path.checkpoints.push(theta.clone());
                next_mark *= 2;
            }
        }
        Ok(path)
    }
}

/// [`estimate_constants_with`] using the default descent oracle.
pub fn estimate_constants(
    problem: &Problem,
    theta0: &ParamVector,
    eta: f64,
    probes: usize,
    seed: u64,
) -> Result<TheoryConstants> {
    estimate_constants_with(problem, theta0, eta, probes, seed, &DescentOracle::default())
}

/// Estimates `(L, sigma^2, f(theta0), f*)` for `problem` and derives `C1`,
/// `C2` for learning rate `eta`.
///
/// - `L` is the analytic constant when known, otherwise the largest
///   gradient difference quotient over `probes` random pairs in a ball
///   around `theta0`.
/// - `sigma^2` is the largest exact empirical gradient variance over the
///   first `probes` checkpoints (iterations 0, 1, 2, 4, ...) of the descent
///   oracle started at `theta0`. With `probes == 1` it is the variance at
///   `theta0` itself.
/// - `f*` is the analytic minimum when known, otherwise the smallest loss
///   seen by the descent oracle.
pub fn estimate_constants_with(
    problem: &Problem,
    theta0: &ParamVector,
    eta: f64,
    probes: usize,
    seed: u64,
    oracle: &DescentOracle,
) -> Result<TheoryConstants> {
    if probes == 0 {
        return Err(Error::config("probes", "probe budget must be at least 1"));
    }
    if theta0.dim() != problem.d() {
        return Err(Error::DimensionMismatch {
            expected: problem.d(),
            found: theta0.dim(),
        });
    }
    let l = match problem.analytic_l() {
        Some(l) => l,
        None => estimate_smoothness(problem, theta0, probes, seed)?,
    };
    if !(l > 0.0) {
        return Err(Error::Domain("smoothness constant estimate is zero".into()));
    }
    if eta * l >= 2.0 {
        return Err(Error::StepSizeTooLarge {
            eta,
            limit: 2.0 / l,
        });
    }

    let f_theta0 = problem.loss(theta0)?;
    let path = oracle.descend(problem, theta0, l, probes, problem.analytic_fstar().is_none())?;
    let f_star = problem.analytic_fstar().unwrap_or(path.min_loss).min(f_theta0);

    let mut sigma_sq: f64 = 0.0;
    for theta in &path.checkpoints {
        sigma_sq = sigma_sq.max(problem.grad_variance(theta)?);
    }
    TheoryConstants::new(l, sigma_sq, f_theta0, f_star, eta)
}

/// Largest gradient difference quotient `|grad f(a) - grad f(b)| / |a - b|`
/// over `probes` random pairs drawn uniformly from the ball of radius
/// `max(1, |theta0|)` around `theta0`.
pub fn estimate_smoothness(problem: &Problem, theta0: &ParamVector, probes: usize, seed: u64) -> Result<f64> {
    if theta0.dim() != problem.d() {
        return Err(Error::DimensionMismatch {
            expected: problem.d(),
            found: theta0.dim(),
        });
    }
    let mut rng = stream_rng(seed, PROBE_STREAM);
    let radius = theta0.norm().max(1.0);
    let d = problem.d();
    let point = |rng: &mut crate::rng::StreamRng| -> ParamVector {
        let dir: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        let r = radius * rng.random::<f64>().powf(1.0 / d as f64);
        let mut p = theta0.clone();
        for (pk, dk) in p.as_mut_slice().iter_mut().zip(&dir) {
            *pk += r * dk / norm;
        }
        p
    };
    let mut best: f64 = 0.0;
    for _ in 0..probes {
        let a = point(&mut rng);
        let b = point(&mut rng);
        let dist = a.distance(&b);
        if dist <= 1e-12 {
            continue;
        }
        let ga = problem.full_grad(&a)?;
        let gb = problem.full_grad(&b)?;
        best = best.max(ga.distance(&gb) / dist);
    }
    Ok(best)
}
