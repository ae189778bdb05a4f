//! Adam over a flat parameter vector.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates, zero-initialised.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step_count: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step_count: 0,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(theta: &mut [f64], grad: &[f64], state: &mut AdamState, lr: f64, params: &AdamParams) {
    assert_eq!(theta.len(), grad.len());
    assert_eq!(theta.len(), state.m.len());
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - params.beta1.powi(t);
    let bc2 = 1.0 - params.beta2.powi(t);
    for (((w, g), m), v) in theta.iter_mut().zip(grad).zip(&mut state.m).zip(&mut state.v) {
        *m = params.beta1 * *m + (1.0 - params.beta1) * g;
        *v = params.beta2 * *v + (1.0 - params.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *w -= lr * m_hat / (v_hat.sqrt() + params.eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_keeps_parameters() {
        let mut theta = vec![1.0, -2.0];
        let mut st = AdamState::new(2);
        adam_step(&mut theta, &[0.0, 0.0], &mut st, 0.1, &AdamParams::default());
        assert_eq!(theta, vec![1.0, -2.0]);
        assert_eq!(st.step_count, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let p = AdamParams::default();
        for g in [3.0, -0.02, 1e4] {
            let mut theta = vec![0.5];
            let mut st = AdamState::new(1);
            adam_step(&mut theta, &[g], &mut st, 1e-3, &p);
            // m_hat = g, v_hat = g^2, so the move is lr |g| / (|g| + eps)
            let expect = 1e-3 * g.abs() / (g.abs() + p.eps);
            assert!(((theta[0] - 0.5).abs() - expect).abs() < 1e-15);
            assert!((theta[0] - 0.5).signum() == -g.signum());
        }
    }

    #[test]
    fn descends_a_quadratic() {
        // L = (x - 3)^2
        let mut x = vec![0.0];
        let mut st = AdamState::new(1);
        let mut prev = (x[0] - 3.0f64).powi(2);
        for _ in 0..2 {
            let g = 2.0 * (x[0] - 3.0);
            adam_step(&mut x, &[g], &mut st, 0.1, &AdamParams::default());
            let now = (x[0] - 3.0f64).powi(2);
            assert!(now < prev);
            prev = now;
        }
        assert!(st.v.iter().all(|&v| v >= 0.0));
    }
}
