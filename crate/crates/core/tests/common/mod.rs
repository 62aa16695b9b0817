//! Reference implementations used as test oracles. Written directly from the
//! loss definitions, sharing no code with the library.
#![allow(dead_code)]

use critbatch_core::{ParamVector, Problem, ProblemKind};

pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut y = x.to_vec();
    for k in 0..x.len() {
        y[k] = x[k] + h;
        let up = f(&y);
        y[k] = x[k] - h;
        let down = f(&y);
        y[k] = x[k];
        g[k] = (up - down) / (2.0 * h);
    }
    g
}

pub fn rel_err(analytic: &[f64], reference: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(reference).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / (1.0 + scale)
}

/// Per-sample loss from first principles. `l2` and `hidden` are only read for
/// the kinds that use them.
pub fn naive_sample_loss(kind: ProblemKind, a: &[f64], y: f64, theta: &[f64], l2: f64, hidden: usize) -> f64 {
    match kind {
        ProblemKind::Quadratic => {
            let r: f64 = a.iter().zip(theta).map(|(x, t)| x * t).sum::<f64>() - y;
            r * r / 2.0
        }
        ProblemKind::Logistic => {
            let z: f64 = a.iter().zip(theta).map(|(x, t)| x * t).sum();
            let reg: f64 = theta.iter().map(|t| t * t).sum::<f64>() * l2 / 2.0;
            (1.0 + (-y * z).exp()).ln() + reg
        }
        ProblemKind::TinyMlp => {
            let p = a.len();
            let mut out = theta[hidden * p + 2 * hidden];
            for j in 0..hidden {
                let mut pre = theta[hidden * p + j];
                for k in 0..p {
                    pre += theta[j * p + k] * a[k];
                }
                out += theta[hidden * p + hidden + j] * pre.tanh();
            }
            (out - y).powi(2) / 2.0
        }
    }
}

pub fn naive_loss(problem: &Problem, theta: &[f64], l2: f64, hidden: usize) -> f64 {
    let mut total = 0.0;
    for i in 0..problem.n() {
        total += naive_sample_loss(problem.kind(), problem.features(i), problem.target(i), theta, l2, hidden);
    }
    total / problem.n() as f64
}

/// Largest eigenvalue of `(1/n) A^T A` by power iteration.
pub fn power_iteration_l(problem: &Problem, iters: usize) -> f64 {
    let p = problem.feature_dim();
    let n = problem.n() as f64;
    let mut v = vec![1.0; p];
    let mut lambda = 0.0;
    for _ in 0..iters {
        let mut w = vec![0.0; p];
        for i in 0..problem.n() {
            let a = problem.features(i);
            let s: f64 = a.iter().zip(&v).map(|(x, y)| x * y).sum();
            for k in 0..p {
                w[k] += s * a[k] / n;
            }
        }
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        lambda = w.iter().zip(&v).map(|(x, y)| x * y).sum::<f64>() / v.iter().map(|x| x * x).sum::<f64>();
        v = w.iter().map(|x| x / norm).collect();
    }
    lambda
}

/// `(1/n) sum_i |g_i - mean|^2` by an explicit double loop over samples.
pub fn naive_variance(problem: &Problem, theta: &ParamVector) -> f64 {
    let n = problem.n();
    let grads: Vec<Vec<f64>> = (0..n)
        .map(|i| problem.per_sample_grad(theta, i).unwrap().into_vec())
        .collect();
    let d = theta.dim();
    let mut mean = vec![0.0; d];
    for g in &grads {
        for k in 0..d {
            mean[k] += g[k];
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut total = 0.0;
    for g in &grads {
        for k in 0..d {
            total += (g[k] - mean[k]).powi(2);
        }
    }
    total / n as f64
}
