use alloc::vec;
use alloc::vec::Vec;

use super::model::{LinearModel, ModelKind, TrainingConfig};
use super::objective::{logistic_objective, logistic_value_grad, mean_sq_norm, smoothed_hinge, svm_objective};
use super::optim::accelerated_descent;
use crate::error::{Error, Result};

/// Smoothing widths for the hinge, coarse to fine. Each stage warm-starts the next.
const HINGE_SMOOTHING: [f64; 7] = [1.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6];

/// A trained model with its optimization trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Fit {
    pub model: LinearModel,
    /// Objective of the returned model on the (possibly standardized) training rows.
    pub objective: f64,
    /// Best objective seen after each epoch; non-increasing.
    pub history: Vec<f64>,
    pub epochs: usize,
}

fn check_inputs(rows: &[Vec<f64>], labels: &[bool]) -> Result<usize> {
    if rows.len() != labels.len() {
        return Err(Error::LengthMismatch { expected: rows.len(), found: labels.len() });
    }
    let d = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().find(|r| r.len() != d) {
        return Err(Error::LengthMismatch { expected: d, found: bad.len() });
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig("feature values must be finite"));
    }
    if !labels.contains(&true) || !labels.contains(&false) {
        return Err(Error::DegenerateLabels);
    }
    Ok(d)
}

/// Per-dimension affine map `x -> (x - mean) / scale`.
struct Scaling {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Scaling {
    fn fit(rows: &[Vec<f64>], d: usize) -> Self {
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; d];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let scale = var.iter().map(|v| if *v > 0.0 { libm::sqrt(*v) } else { 1.0 }).collect();
        Self { mean, scale }
    }

    fn apply(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter()
            .map(|r| r.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s).collect())
            .collect()
    }

    /// Maps a model over standardized inputs back to raw inputs.
    fn fold(&self, weights: &[f64], bias: f64) -> (Vec<f64>, f64) {
        let w: Vec<f64> = weights.iter().zip(&self.scale).map(|(w, s)| w / s).collect();
        let shift: f64 = w.iter().zip(&self.mean).map(|(w, m)| w * m).sum();
        (w, bias - shift)
    }
}

struct Best {
    objective: f64,
    theta: Vec<f64>,
    history: Vec<f64>,
}

impl Best {
    fn new(theta: Vec<f64>, objective: f64) -> Self {
        Self { objective, theta, history: Vec::new() }
    }

    fn offer(&mut self, theta: &[f64], objective: f64) {
        if objective < self.objective {
            self.objective = objective;
            self.theta.copy_from_slice(theta);
        }
        self.history.push(self.objective);
    }
}

fn finish(best: Best, scaling: Option<Scaling>, d: usize, cfg: &TrainingConfig, kind: ModelKind, epochs: usize) -> Fit {
    let (weights, bias) = match scaling {
        Some(s) => s.fold(&best.theta[..d], best.theta[d]),
        None => (best.theta[..d].to_vec(), best.theta[d]),
    };
    Fit {
        model: LinearModel { weights, bias, lambda: cfg.lambda, kind },
        objective: best.objective,
        history: best.history,
        epochs,
    }
}

fn prepare<'a>(
    rows: &'a [Vec<f64>],
    d: usize,
    cfg: &TrainingConfig,
) -> (alloc::borrow::Cow<'a, [Vec<f64>]>, Option<Scaling>) {
    if cfg.standardize {
        let s = Scaling::fit(rows, d);
        (alloc::borrow::Cow::Owned(s.apply(rows)), Some(s))
    } else {
        (alloc::borrow::Cow::Borrowed(rows), None)
    }
}

/// Minimizes `lambda/2 |w|^2 + mean hinge(y (w.x + b))`.
///
/// The hinge is smoothed with a shrinking quadratic zone and each smoothed
/// problem is solved by accelerated gradient descent; the iterate with the
/// lowest exact hinge objective is returned.
pub fn train_svm(rows: &[Vec<f64>], labels: &[bool], cfg: &TrainingConfig) -> Result<Fit> {
    cfg.validate()?;
    let d = check_inputs(rows, labels)?;
    let (train, scaling) = prepare(rows, d, cfg);
    let train: &[Vec<f64>] = &train;
    let exact = |theta: &[f64]| svm_objective(&theta[..d], theta[d], train, labels, cfg.lambda);

    let mut theta = vec![0.0; d + 1];
    let mut best = Best::new(theta.clone(), exact(&theta));
    let per_stage = (cfg.max_epochs / HINGE_SMOOTHING.len()).max(1);
    let radius = mean_sq_norm(train);
    let mut epochs = 0;
    for mu in HINGE_SMOOTHING {
        let step = 1.0 / (cfg.lambda + radius / mu);
        epochs += accelerated_descent(
            &mut theta,
            step,
            per_stage,
            cfg.tolerance,
            |th, g| smoothed_hinge(th, train, labels, cfg.lambda, mu, g),
            |th| best.offer(th, exact(th)),
        );
    }
    Ok(finish(best, scaling, d, cfg, ModelKind::Svm, epochs))
}

/// Minimizes `lambda/2 |w|^2 + mean log-loss`; probabilities are `sigmoid(w.x + b)`.
pub fn train_logistic(rows: &[Vec<f64>], labels: &[bool], cfg: &TrainingConfig) -> Result<Fit> {
    cfg.validate()?;
    let d = check_inputs(rows, labels)?;
    let (train, scaling) = prepare(rows, d, cfg);
    let train: &[Vec<f64>] = &train;
    let exact = |theta: &[f64]| logistic_objective(&theta[..d], theta[d], train, labels, cfg.lambda);

    let mut theta = vec![0.0; d + 1];
    let mut best = Best::new(theta.clone(), exact(&theta));
    let step = 1.0 / (cfg.lambda + 0.25 * mean_sq_norm(train));
    let epochs = accelerated_descent(
        &mut theta,
        step,
        cfg.max_epochs,
        cfg.tolerance,
        |th, g| logistic_value_grad(th, train, labels, cfg.lambda, g),
        |th| best.offer(th, exact(th)),
    );
    Ok(finish(best, scaling, d, cfg, ModelKind::Logistic, epochs))
}
