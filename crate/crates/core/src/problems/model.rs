//! Per-sample losses and gradients for the three objective families.
//!
//! All functions take the sample's feature row and target, and accumulate
//! `weight * grad f_i(theta)` into `out`.

use super::vector::dot;

/// Numerically stable `ln(1 + e^x)`.
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Logistic sigmoid without overflow for large `|x|`.
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

// f_i = 1/2 (a_i . theta - y_i)^2
pub(crate) fn quadratic_loss(theta: &[f64], a: &[f64], y: f64) -> f64 {
    let r = dot(a, theta) - y;
    0.5 * r * r
}

pub(crate) fn quadratic_grad(theta: &[f64], a: &[f64], y: f64, weight: f64, out: &mut [f64]) {
    let r = weight * (dot(a, theta) - y);
    for (o, ak) in out.iter_mut().zip(a) {
        *o += r * ak;
    }
}

// f_i = ln(1 + exp(-y_i a_i . theta)) + l2/2 |theta|^2, y_i in {-1, +1}
pub(crate) fn logistic_loss(theta: &[f64], a: &[f64], y: f64, l2: f64) -> f64 {
    softplus(-y * dot(a, theta)) + 0.5 * l2 * dot(theta, theta)
}

pub(crate) fn logistic_grad(theta: &[f64], a: &[f64], y: f64, l2: f64, weight: f64, out: &mut [f64]) {
    let margin = y * dot(a, theta);
    let coef = -weight * y * sigmoid(-margin);
    for ((o, ak), tk) in out.iter_mut().zip(a).zip(theta) {
        *o += coef * ak + weight * l2 * tk;
    }
}

/// Parameter layout of the one-hidden-layer network: `W1` (hidden x inputs,
/// row-major), `b1` (hidden), `w2` (hidden), `b2` (scalar).
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct MlpShape {
    pub inputs: usize,
    pub hidden: usize,
}

impl MlpShape {
    pub fn param_dim(&self) -> usize {
        self.hidden * self.inputs + 2 * self.hidden + 1
    }

    fn split<'a>(&self, theta: &'a [f64]) -> (&'a [f64], &'a [f64], &'a [f64], f64) {
        let w1_end = self.hidden * self.inputs;
        let b1_end = w1_end + self.hidden;
        let w2_end = b1_end + self.hidden;
        (
            &theta[..w1_end],
            &theta[w1_end..b1_end],
            &theta[b1_end..w2_end],
            theta[w2_end],
        )
    }

    pub fn forward(&self, theta: &[f64], x: &[f64], hidden_out: &mut [f64]) -> f64 {
        let (w1, b1, w2, b2) = self.split(theta);
        let mut out = b2;
        for j in 0..self.hidden {
            let row = &w1[j * self.inputs..(j + 1) * self.inputs];
            let act = (dot(row, x) + b1[j]).tanh();
            hidden_out[j] = act;
            out += w2[j] * act;
        }
        out
    }
}

// f_i = 1/2 (net(x_i; theta) - y_i)^2 with tanh hidden units
pub(crate) fn mlp_loss(shape: MlpShape, theta: &[f64], x: &[f64], y: f64) -> f64 {
    let mut hidden = vec![0.0; shape.hidden];
    let r = shape.forward(theta, x, &mut hidden) - y;
    0.5 * r * r
}

pub(crate) fn mlp_grad(shape: MlpShape, theta: &[f64], x: &[f64], y: f64, weight: f64, out: &mut [f64]) {
    let mut hidden = vec![0.0; shape.hidden];
    let r = weight * (shape.forward(theta, x, &mut hidden) - y);
    let (_, _, w2, _) = shape.split(theta);
    let w1_end = shape.hidden * shape.inputs;
    let b1_end = w1_end + shape.hidden;
    for j in 0..shape.hidden {
        let a = hidden[j];
        let back = r * w2[j] * (1.0 - a * a);
        let row = &mut out[j * shape.inputs..(j + 1) * shape.inputs];
        for (o, xk) in row.iter_mut().zip(x) {
            *o += back * xk;
        }
        out[w1_end + j] += back;
        out[b1_end + j] += r * a;
    }
    out[b1_end + shape.hidden] += r;
}
