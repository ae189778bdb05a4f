//! Training losses with their gradients.

use crate::error::{Error, Result};

/// Mean squared error over observations and components, with
/// `dL/dpred_i = 2 (pred_i - target_i) / (n_obs * d)` per observation.
pub fn trajectory_mse(
    pred_times: &[f64],
    pred: &[Vec<f64>],
    target_times: &[f64],
    target: &[Vec<f64>],
) -> Result<(f64, Vec<Vec<f64>>)> {
    if pred.len() != target.len() || pred_times.len() != target_times.len() || pred.len() != pred_times.len() {
        return Err(Error::DimensionMismatch {
            expected: target.len(),
            got: pred.len(),
        });
    }
    for (&tp, &tt) in pred_times.iter().zip(target_times) {
        if tp != tt {
            return Err(Error::TimeMismatch { pred: tp, target: tt });
        }
    }
    if pred.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let d = target[0].len();
    let denom = (pred.len() * d) as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(pred.len());
    for (p, y) in pred.iter().zip(target) {
        if p.len() != d || y.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: p.len() });
        }
        let g = p
            .iter()
            .zip(y)
            .map(|(a, b)| {
                let r = a - b;
                loss += r * r;
                2.0 * r / denom
            })
            .collect();
        grads.push(g);
    }
    Ok((loss / denom, grads))
}

/// Plain mean squared error between two equally long sets of vectors.
pub fn mse(pred: &[Vec<f64>], target: &[Vec<f64>]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (p, y) in pred.iter().zip(target) {
        for (a, b) in p.iter().zip(y) {
            sum += (a - b) * (a - b);
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Softmax cross-entropy with log-sum-exp stabilisation; the gradient with
/// respect to the logits is `softmax - onehot`.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if logits.len() < 2 || label >= logits.len() {
        return Err(Error::DimensionMismatch {
            expected: logits.len().max(2),
            got: label,
        });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    let lse = max + sum.ln();
    let loss = lse - logits[label];
    let grad = logits
        .iter()
        .enumerate()
        .map(|(i, l)| (l - lse).exp() - if i == label { 1.0 } else { 0.0 })
        .collect();
    Ok((loss, grad))
}
