//! Accelerated full-batch gradient descent with a fixed `1/L` step.

use alloc::vec;

/// Runs Nesterov's method from `theta` for at most `epochs` iterations.
///
/// Momentum restarts whenever the step direction disagrees with the gradient.
/// `observe` sees every accepted iterate; it is the caller's hook for
/// tracking the best point under the true (possibly non-smooth) objective.
pub(crate) fn accelerated_descent(
    theta: &mut [f64],
    step: f64,
    epochs: usize,
    tolerance: f64,
    mut value_grad: impl FnMut(&[f64], &mut [f64]) -> f64,
    mut observe: impl FnMut(&[f64]),
) -> usize {
    let n = theta.len();
    let mut y = theta.to_vec();
    let mut grad = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut t = 1.0f64;
    for epoch in 0..epochs {
        value_grad(&y, &mut grad);
        let gnorm = grad.iter().map(|g| g * g).sum::<f64>();
        if libm::sqrt(gnorm) <= tolerance {
            theta.copy_from_slice(&y);
            observe(theta);
            return epoch;
        }
        for i in 0..n {
            next[i] = y[i] - step * grad[i];
        }
        let uphill: f64 = (0..n).map(|i| grad[i] * (next[i] - theta[i])).sum();
        if uphill > 0.0 {
            t = 1.0;
            y.copy_from_slice(&next);
        } else {
            let t_next = 0.5 * (1.0 + libm::sqrt(1.0 + 4.0 * t * t));
            let beta = (t - 1.0) / t_next;
            for i in 0..n {
                y[i] = next[i] + beta * (next[i] - theta[i]);
            }
            t = t_next;
        }
        theta.copy_from_slice(&next);
        observe(theta);
    }
    epochs
}
