//! Regularized empirical risks. Only the weights are penalized: `lambda/2 |w|^2 + mean loss`.

use alloc::vec::Vec;

fn margin_input(weights: &[f64], bias: f64, row: &[f64]) -> f64 {
    weights.iter().zip(row).map(|(w, x)| w * x).sum::<f64>() + bias
}

fn penalty(weights: &[f64], lambda: f64) -> f64 {
    0.5 * lambda * weights.iter().map(|w| w * w).sum::<f64>()
}

fn sign(label: bool) -> f64 {
    if label {
        1.0
    } else {
        -1.0
    }
}

/// `log(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + libm::log1p(libm::exp(-z.abs()))
}

pub fn svm_objective(weights: &[f64], bias: f64, rows: &[Vec<f64>], labels: &[bool], lambda: f64) -> f64 {
    let hinge: f64 = rows
        .iter()
        .zip(labels)
        .map(|(x, &y)| (1.0 - sign(y) * margin_input(weights, bias, x)).max(0.0))
        .sum();
    penalty(weights, lambda) + hinge / rows.len() as f64
}

pub fn logistic_objective(
    weights: &[f64],
    bias: f64,
    rows: &[Vec<f64>],
    labels: &[bool],
    lambda: f64,
) -> f64 {
    let loss: f64 = rows
        .iter()
        .zip(labels)
        .map(|(x, &y)| {
            let z = margin_input(weights, bias, x);
            softplus(z) - if y { z } else { 0.0 }
        })
        .sum();
    penalty(weights, lambda) + loss / rows.len() as f64
}

/// Analytic gradient of [`logistic_objective`] as `(d/dw, d/db)`.
pub fn logistic_gradient(
    weights: &[f64],
    bias: f64,
    rows: &[Vec<f64>],
    labels: &[bool],
    lambda: f64,
) -> (Vec<f64>, f64) {
    let n = rows.len() as f64;
    let mut gw: Vec<f64> = weights.iter().map(|w| lambda * w).collect();
    let mut gb = 0.0;
    for (x, &y) in rows.iter().zip(labels) {
        let r = (super::model::sigmoid(margin_input(weights, bias, x)) - if y { 1.0 } else { 0.0 }) / n;
        for (g, v) in gw.iter_mut().zip(x) {
            *g += r * v;
        }
        gb += r;
    }
    (gw, gb)
}

/// Hinge loss with its kink replaced by a quadratic of width `mu`.
///
/// Value and gradient at `theta = [w.., b]`; the gradient is written into `grad`.
pub(crate) fn smoothed_hinge(
    theta: &[f64],
    rows: &[Vec<f64>],
    labels: &[bool],
    lambda: f64,
    mu: f64,
    grad: &mut [f64],
) -> f64 {
    let d = theta.len() - 1;
    let (w, b) = (&theta[..d], theta[d]);
    let n = rows.len() as f64;
    for (g, wi) in grad[..d].iter_mut().zip(w) {
        *g = lambda * wi;
    }
    grad[d] = 0.0;
    let mut loss = 0.0;
    for (x, &y) in rows.iter().zip(labels) {
        let s = sign(y);
        let m = s * margin_input(w, b, x);
        let dm = if m >= 1.0 {
            0.0
        } else if m <= 1.0 - mu {
            loss += 1.0 - m - 0.5 * mu;
            -1.0
        } else {
            loss += (1.0 - m) * (1.0 - m) / (2.0 * mu);
            -(1.0 - m) / mu
        };
        if dm != 0.0 {
            let c = dm * s / n;
            for (g, v) in grad[..d].iter_mut().zip(x) {
                *g += c * v;
            }
            grad[d] += c;
        }
    }
    penalty(w, lambda) + loss / n
}

pub(crate) fn logistic_value_grad(
    theta: &[f64],
    rows: &[Vec<f64>],
    labels: &[bool],
    lambda: f64,
    grad: &mut [f64],
) -> f64 {
    let d = theta.len() - 1;
    let (gw, gb) = logistic_gradient(&theta[..d], theta[d], rows, labels, lambda);
    grad[..d].copy_from_slice(&gw);
    grad[d] = gb;
    logistic_objective(&theta[..d], theta[d], rows, labels, lambda)
}

/// Mean squared norm of the rows augmented with the constant bias input.
pub(crate) fn mean_sq_norm(rows: &[Vec<f64>]) -> f64 {
    let total: f64 = rows.iter().map(|r| 1.0 + r.iter().map(|v| v * v).sum::<f64>()).sum();
    total / rows.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn smoothed_hinge_approaches_hinge() {
        let rows = vec![vec![1.0], vec![-1.0], vec![0.3]];
        let labels = [true, false, false];
        let theta = [0.7, 0.1];
        let exact = svm_objective(&theta[..1], theta[1], &rows, &labels, 0.5);
        let mut g = [0.0; 2];
        let smooth = smoothed_hinge(&theta, &rows, &labels, 0.5, 1e-9, &mut g);
        assert!((exact - smooth).abs() < 1e-8);
    }

    #[test]
    fn softplus_large_arguments() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
        assert!((softplus(0.0) - core::f64::consts::LN_2).abs() < 1e-15);
    }
}
