//! Parameter gradients by the adjoint method for constant-delay fields.
//!
//! With `alpha(t) = -dL/dz(t)` the costate obeys the advanced-argument DDE
//!
//! ```text
//! d alpha/dt = -alpha(t)^T f_z(t) - alpha(t + tau)^T f_v(t + tau)
//! ```
//!
//! integrated from `T` down to `t0`, and
//! `dL/dtheta = SIGN * int_{t0}^{T} alpha(t)^T f_theta(t) dt`. The history is
//! parameter-free, so the boundary integral over `[t0 - tau, t0]` vanishes.
//!
//! `alpha` is zero beyond `T`. Every observation time is a jump
//! `alpha <- alpha - dL/dz(t_obs)`; the adjoint trajectory keeps both one-sided
//! limits at such knots so that stages on either side read the right value.
//!
//! The forward trajectory is the checkpoint store: `z(t)` and `z(t - tau)` are
//! reconstructed by interpolation whenever a Jacobian product is needed.

use crate::error::{Error, Result};
use crate::field::{DelayField, FieldCache};
use crate::solver::{all_finite, check_dim, decide, landing_step, scaled_error_norm, StepMode, Trajectory};

/// Sign relating the accumulated quadrature to `dL/dtheta` under the
/// convention `alpha = -dL/dz`. Pinned by the finite-difference tests.
pub const GRADIENT_SIGN: f64 = -1.0;

/// Observation times with the loss value and `dL/dz(t_obs)` at each.
///
/// Times are non-decreasing and lie in `(t0, T]`; coincident observations
/// are allowed and their cotangents add.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    times: Vec<f64>,
    loss_grads: Vec<Vec<f64>>,
    loss: f64,
}

impl ObservationSet {
    pub fn new(times: Vec<f64>, loss_grads: Vec<Vec<f64>>, loss: f64) -> Result<Self> {
        check_dim(times.len(), loss_grads.len())?;
        if times.windows(2).any(|w| !(w[1] >= w[0])) {
            return Err(Error::InvalidConfig(
                "observation times must be sorted".into(),
            ));
        }
        Ok(Self {
            times,
            loss_grads,
            loss,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn loss_grads(&self) -> &[Vec<f64>] {
        &self.loss_grads
    }

    pub fn loss(&self) -> f64 {
        self.loss
    }

    /// Distinct times, descending, with summed cotangents.
    fn jumps_descending(&self) -> Vec<(f64, Vec<f64>)> {
        let mut out: Vec<(f64, Vec<f64>)> = Vec::new();
        for (&t, g) in self.times.iter().zip(&self.loss_grads).rev() {
            match out.last_mut() {
                Some((tl, acc)) if *tl == t => {
                    for (a, b) in acc.iter_mut().zip(g) {
                        *a += b;
                    }
                }
                _ => out.push((t, g.clone())),
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradResult {
    pub grad_theta: Vec<f64>,
    pub loss: f64,
    pub n_backward_steps: usize,
}

/// Which one-sided limit to read at a jump knot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// Limit from smaller times (the value after the jump is applied).
    Below,
    /// Limit from larger times.
    Above,
}

/// Costate knots recorded from `T` downwards.
///
/// Knot times strictly decrease. `below`/`above` coincide except at
/// observation jumps. Queries beyond `T` return zero.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointTrajectory {
    dim: usize,
    t_end: f64,
    times: Vec<f64>,
    below: Vec<f64>,
    above: Vec<f64>,
}

impl AdjointTrajectory {
    pub fn new(dim: usize, t_end: f64) -> Self {
        Self {
            dim,
            t_end,
            times: Vec::new(),
            below: Vec::new(),
            above: Vec::new(),
        }
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn record(&mut self, t: f64, below: &[f64], above: &[f64]) -> Result<()> {
        check_dim(self.dim, below.len())?;
        check_dim(self.dim, above.len())?;
        if let Some(&last) = self.times.last() {
            if !(t < last) {
                return Err(Error::InvalidConfig(format!(
                    "adjoint knot {t} does not precede {last}"
                )));
            }
        }
        self.times.push(t);
        self.below.extend_from_slice(below);
        self.above.extend_from_slice(above);
        Ok(())
    }

    fn set_last_below(&mut self, value: &[f64]) {
        let n = self.below.len();
        self.below[n - self.dim..].copy_from_slice(value);
    }

    fn below_at(&self, i: usize) -> &[f64] {
        &self.below[i * self.dim..(i + 1) * self.dim]
    }

    fn above_at(&self, i: usize) -> &[f64] {
        &self.above[i * self.dim..(i + 1) * self.dim]
    }

    /// Writes `alpha(s)` from the requested side into `out`.
    ///
    /// Queries within a relative `1e-9` of a knot read that knot, so stage
    /// times that coincide with a jump up to rounding pick the intended limit.
    pub fn query_into(&self, s: f64, side: Side, out: &mut [f64]) -> Result<()> {
        let snap = 1e-9 * self.t_end.abs().max(1.0);
        if s > self.t_end + snap || (side == Side::Above && s >= self.t_end - snap) {
            out.fill(0.0);
            return Ok(());
        }
        let last = match self.times.last() {
            Some(&t) => t,
            None => {
                return Err(Error::QueryBeyondTrajectory { t: s, last: self.t_end });
            }
        };
        if s < last - snap {
            return Err(Error::QueryBeyondTrajectory { t: s, last });
        }
        // first knot with time <= s (times descend)
        let k = self.times.partition_point(|&tk| tk > s);
        let near = |i: usize| (self.times[i] - s).abs() <= snap;
        let hit = if k < self.times.len() && near(k) {
            Some(k)
        } else if k > 0 && near(k - 1) {
            Some(k - 1)
        } else {
            None
        };
        if let Some(i) = hit {
            out.copy_from_slice(match side {
                Side::Below => self.below_at(i),
                Side::Above => self.above_at(i),
            });
            return Ok(());
        }
        if k == 0 || k == self.times.len() {
            return Err(Error::QueryBeyondTrajectory { t: s, last });
        }
        let (t_hi, t_lo) = (self.times[k - 1], self.times[k]);
        let hi = self.below_at(k - 1);
        let lo = self.above_at(k);
        let w = (s - t_lo) / (t_hi - t_lo);
        for ((o, a), b) in out.iter_mut().zip(lo).zip(hi) {
            *o = a + (b - a) * w;
        }
        Ok(())
    }

    pub fn query(&self, s: f64, side: Side) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        self.query_into(s, side, &mut out)?;
        Ok(out)
    }
}

/// Scratch space for evaluating the costate dynamics at one time point.
struct AdjointWork {
    z: Vec<f64>,
    v: Vec<f64>,
    alpha_adv: Vec<f64>,
    gu: Vec<f64>,
    gh: Vec<f64>,
    adv_cache: FieldCache,
    scratch_out: Vec<f64>,
}

impl AdjointWork {
    fn new(field: &DelayField) -> Self {
        let spec = field.spec();
        let d = spec.state_dim;
        Self {
            z: vec![0.0; d],
            v: vec![0.0; d],
            alpha_adv: vec![0.0; d],
            gu: vec![0.0; spec.input_width()],
            gh: vec![0.0; spec.hidden_dim],
            adv_cache: FieldCache::new(spec),
            scratch_out: vec![0.0; d],
        }
    }

    /// Forward pass of `f` at `(t, z(t), z(t - tau))` into `cache`.
    fn local_forward(&mut self, field: &DelayField, fwd: &Trajectory, t: f64, cache: &mut FieldCache) -> Result<()> {
        let tau = field.spec().tau;
        fwd.interpolate_into(t, &mut self.z)?;
        fwd.interpolate_into(t - tau, &mut self.v)?;
        field.forward_into(t, &self.z, &self.v, cache, &mut self.scratch_out);
        Ok(())
    }

    /// `d alpha/dt` at `t` given the local forward `cache`, optionally adding
    /// `scale * alpha^T f_theta(t)` into `theta_acc`.
    #[allow(clippy::too_many_arguments)]
    fn rhs(
        &mut self,
        field: &DelayField,
        fwd: &Trajectory,
        adj: &AdjointTrajectory,
        t: f64,
        alpha: &[f64],
        cache: &FieldCache,
        side: Side,
        out: &mut [f64],
        theta_acc: Option<(&mut [f64], f64)>,
    ) -> Result<()> {
        let tau = field.spec().tau;
        out.fill(0.0);
        // local term: -alpha^T f_z(t)
        field.backward_into(cache, alpha, &mut self.gu, &mut self.gh, theta_acc);
        field.split_input_grad(&self.gu, -1.0, Some(out), None);

        // advanced term: -alpha(t + tau)^T f_v(t + tau), zero beyond T
        let s = t + tau;
        adj.query_into(s, side, &mut self.alpha_adv)?;
        if self.alpha_adv.iter().any(|&x| x != 0.0) {
            let s = s.min(fwd.last_time());
            fwd.interpolate_into(s, &mut self.z)?;
            fwd.interpolate_into(s - tau, &mut self.v)?;
            field.forward_into(s, &self.z, &self.v, &mut self.adv_cache, &mut self.scratch_out);
            field.backward_into(&self.adv_cache, &self.alpha_adv, &mut self.gu, &mut self.gh, None);
            field.split_input_grad(&self.gu, -1.0, None, Some(out));
        }
        Ok(())
    }
}

/// `d alpha/dt` at time `t` (advanced value read from below at jumps).
pub fn adjoint_rhs(
    t: f64,
    alpha: &[f64],
    adj: &AdjointTrajectory,
    fwd: &Trajectory,
    field: &DelayField,
) -> Result<Vec<f64>> {
    let d = field.spec().state_dim;
    check_dim(d, alpha.len())?;
    let mut work = AdjointWork::new(field);
    let mut cache = FieldCache::new(field.spec());
    work.local_forward(field, fwd, t, &mut cache)?;
    let mut out = vec![0.0; d];
    work.rhs(field, fwd, adj, t, alpha, &cache, Side::Below, &mut out, None)?;
    Ok(out)
}

/// Integrates the costate from `T = fwd.last_time()` down to `t0` and returns
/// `dL/dtheta`. Uses the same RK12 pair and step cap `h <= tau` as the forward
/// solver; the parameter integral is accumulated by the trapezoid rule on
/// accepted steps.
pub fn backward_pass(fwd: &Trajectory, field: &DelayField, obs: &ObservationSet, mode: &StepMode) -> Result<GradResult> {
    let (adj, result) = backward_pass_with_trajectory(fwd, field, obs, mode)?;
    drop(adj);
    Ok(result)
}

/// [`backward_pass`], also returning the recorded costate.
pub fn backward_pass_with_trajectory(
    fwd: &Trajectory,
    field: &DelayField,
    obs: &ObservationSet,
    mode: &StepMode,
) -> Result<(AdjointTrajectory, GradResult)> {
    let spec = field.spec();
    let d = spec.state_dim;
    let tau = spec.tau;
    let p = spec.param_count();
    check_dim(d, fwd.dim())?;
    let t0 = fwd.t0();
    let t_end = fwd.last_time();

    for (&t, g) in obs.times.iter().zip(&obs.loss_grads) {
        check_dim(d, g.len())?;
        if !(t > t0 && t <= t_end) || fwd.knot_index(t).is_none() {
            return Err(Error::ObservationNotOnKnot(t));
        }
    }
    let jumps = obs.jumps_descending();
    let mut jump_iter = jumps.iter().peekable();

    let (cap, h_fixed, cfg) = match mode {
        StepMode::Fixed { h } => {
            if !(*h > 0.0) {
                return Err(Error::InvalidConfig(format!("step size {h} must be positive")));
            }
            if *h > tau {
                return Err(Error::StepExceedsDelay { h: *h, tau });
            }
            (tau, Some(*h), None)
        }
        StepMode::Adaptive(cfg) => {
            cfg.validate()?;
            (cfg.h_max.min(tau), None, Some(cfg))
        }
    };

    let mut adj = AdjointTrajectory::new(d, t_end);
    let mut work = AdjointWork::new(field);
    let mut cache_here = FieldCache::new(spec);
    let mut cache_trial = FieldCache::new(spec);

    let mut t = t_end;
    let mut alpha = vec![0.0; d];
    let zeros = vec![0.0; d];
    let mut below = alpha.clone();
    if let Some((tj, g)) = jump_iter.next_if(|(tj, _)| *tj == t_end) {
        debug_assert_eq!(*tj, t_end);
        for (a, gi) in below.iter_mut().zip(g) {
            *a -= gi;
        }
    }
    alpha.copy_from_slice(&below);
    adj.record(t, &below, &zeros)?;

    // k1 and alpha^T f_theta at the current point
    let mut k1 = vec![0.0; d];
    let mut theta_here = vec![0.0; p];
    work.local_forward(field, fwd, t, &mut cache_here)?;
    work.rhs(field, fwd, &adj, t, &alpha, &cache_here, Side::Below, &mut k1, Some((&mut theta_here, 1.0)))?;

    let mut quad = vec![0.0; p];
    let mut theta_new = vec![0.0; p];
    let mut alpha_pred = vec![0.0; d];
    let mut alpha_new = vec![0.0; d];
    let mut k2 = vec![0.0; d];
    let mut err = vec![0.0; d];
    let mut h = match (h_fixed, cfg) {
        (Some(h), _) => h,
        (None, Some(cfg)) => cfg.h_init.min(cap),
        _ => unreachable!(),
    };
    let mut attempts = 0usize;
    let mut accepted = 0usize;

    let mut targets: Vec<f64> = jumps.iter().map(|(tj, _)| *tj).filter(|&tj| tj < t_end).collect();
    targets.push(t0);

    let mut anchor = t_end;
    for &target in &targets {
        let mut k = 0u64;
        while t > target {
            attempts += 1;
            if let Some(cfg) = cfg {
                if attempts > cfg.max_steps {
                    return Err(Error::MaxStepsExceeded(cfg.max_steps));
                }
            }
            let landing = landing_step(t - target, h, cap);
            let (step, t_new) = match (landing, h_fixed) {
                (Some(rem), _) => (rem, target),
                (None, Some(h)) => {
                    let t_new = anchor - (k + 1) as f64 * h;
                    (t - t_new, t_new)
                }
                (None, None) => (h, t - h),
            };
            debug_assert!(step <= tau * (1.0 + 1e-12));

            for j in 0..d {
                alpha_pred[j] = alpha[j] - step * k1[j];
            }
            work.local_forward(field, fwd, t_new, &mut cache_trial)?;
            work.rhs(field, fwd, &adj, t_new, &alpha_pred, &cache_trial, Side::Above, &mut k2, None)?;
            for j in 0..d {
                alpha_new[j] = alpha[j] - 0.5 * step * (k1[j] + k2[j]);
                err[j] = 0.5 * step * (k2[j] - k1[j]);
            }
            if !all_finite(&alpha_new) {
                return Err(Error::NonFiniteGradient);
            }

            if let Some(cfg) = cfg {
                let e = scaled_error_norm(&err, &alpha, &alpha_new, cfg.rtol, cfg.atol);
                let decision = decide(e, step, cfg);
                if !decision.accept {
                    if step <= cfg.h_min * (1.0 + 1e-12) {
                        return Err(Error::StepUnderflow { t, h: step });
                    }
                    h = decision.h_next.min(cap).min(step);
                    continue;
                }
                h = if landing.is_some() && step < h {
                    decision.h_next.max(h)
                } else {
                    decision.h_next
                }
                .min(cap);
            } else if landing.is_none() {
                k += 1;
            }

            accepted += 1;
            adj.record(t_new, &alpha_new, &alpha_new)?;
            t = t_new;
            std::mem::swap(&mut alpha, &mut alpha_new);
            std::mem::swap(&mut cache_here, &mut cache_trial);
            theta_new.fill(0.0);
            work.rhs(field, fwd, &adj, t, &alpha, &cache_here, Side::Below, &mut k1, Some((&mut theta_new, 1.0)))?;
            for ((q, a), b) in quad.iter_mut().zip(&theta_here).zip(&theta_new) {
                *q += 0.5 * step * (a + b);
            }
            std::mem::swap(&mut theta_here, &mut theta_new);
        }

        anchor = target;
        if let Some((_, g)) = jump_iter.next_if(|(tj, _)| *tj == target) {
            for (a, gi) in alpha.iter_mut().zip(g) {
                *a -= gi;
            }
            adj.set_last_below(&alpha);
            theta_here.fill(0.0);
            work.rhs(field, fwd, &adj, t, &alpha, &cache_here, Side::Below, &mut k1, Some((&mut theta_here, 1.0)))?;
        }
    }

    // The history is parameter-free (z_theta = 0 on [t0 - tau, t0]), so the
    // boundary integral of alpha(t + tau)^T f_v(t + tau) z_theta(t) is zero.
    let history_term = 0.0;
    let grad_theta: Vec<f64> = quad.iter().map(|q| GRADIENT_SIGN * q - history_term).collect();
    if !all_finite(&grad_theta) {
        return Err(Error::NonFiniteGradient);
    }
    Ok((
        adj,
        GradResult {
            grad_theta,
            loss: obs.loss,
            n_backward_steps: accepted,
        },
    ))
}

/// Central differences `(L(theta + eps e_j) - L(theta - eps e_j)) / (2 eps)`.
pub fn finite_diff_grad<F>(mut loss_fn: F, theta: &[f64], eps: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = theta.to_vec();
    (0..theta.len())
        .map(|j| {
            probe[j] = theta[j] + eps;
            let up = loss_fn(&probe);
            probe[j] = theta[j] - eps;
            let down = loss_fn(&probe);
            probe[j] = theta[j];
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finite_differences_basic() {
        let g = finite_diff_grad(|_| 3.0, &[1.0, 2.0], 1e-3);
        assert_eq!(g, vec![0.0, 0.0]);
        let theta = [0.5, -1.25, 2.0];
        let g = finite_diff_grad(|x| x.iter().map(|v| v * v).sum::<f64>() / 2.0, &theta, 1e-3);
        for (a, b) in g.iter().zip(&theta) {
            assert!((a - b).abs() < 1e-12);
        }
        let g = finite_diff_grad(|x| x[0].sin(), &[0.3], 1e-6);
        assert!((g[0] - 0.3f64.cos()).abs() < 1e-8);
    }

    #[test]
    fn adjoint_trajectory_sides_and_padding() {
        let mut adj = AdjointTrajectory::new(1, 2.0);
        adj.record(2.0, &[-1.0], &[0.0]).unwrap();
        adj.record(1.0, &[3.0], &[1.0]).unwrap();
        adj.record(0.0, &[5.0], &[5.0]).unwrap();
        assert_eq!(adj.query(2.5, Side::Below).unwrap(), vec![0.0]);
        assert_eq!(adj.query(2.0, Side::Above).unwrap(), vec![0.0]);
        assert_eq!(adj.query(2.0, Side::Below).unwrap(), vec![-1.0]);
        assert_eq!(adj.query(1.0, Side::Above).unwrap(), vec![1.0]);
        assert_eq!(adj.query(1.0, Side::Below).unwrap(), vec![3.0]);
        // between 1 and 2: above-limit at 1 (= 1) to below-limit at 2 (= -1)
        assert_eq!(adj.query(1.5, Side::Below).unwrap(), vec![0.0]);
        assert_eq!(adj.query(0.5, Side::Below).unwrap(), vec![4.0]);
        assert_eq!(adj.query(1.0 + 1e-13, Side::Below).unwrap(), vec![3.0]);
        assert!(adj.query(-0.5, Side::Below).is_err());
        assert!(adj.record(0.0, &[0.0], &[0.0]).is_err());
    }

    #[test]
    fn observation_jumps_merge_coincident_times() {
        let obs = ObservationSet::new(
            vec![1.0, 2.0, 2.0],
            vec![vec![1.0], vec![0.5], vec![0.25]],
            0.0,
        )
        .unwrap();
        let jumps = obs.jumps_descending();
        assert_eq!(jumps, vec![(2.0, vec![0.75]), (1.0, vec![1.0])]);
        assert!(ObservationSet::new(vec![2.0, 1.0], vec![vec![0.0], vec![0.0]], 0.0).is_err());
    }
}
