//! Forward integration of constant-delay differential equations.
//!
//! The production path is an adaptive embedded Euler/Heun pair (RK12) whose
//! delayed arguments are served by linear interpolation over the knots that
//! have already been accepted. A fixed-step classical RK4 integrator is kept
//! alongside it as an accuracy reference.
//!
//! Every step satisfies `h <= tau`, so a delayed stage argument `t + c*h - tau`
//! never lies beyond the last accepted knot and no extrapolation is needed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Right-hand side `g(t, z(t), z(t - tau))` of a single constant-delay DDE.
pub trait DelayRhs {
    /// State dimension `d`.
    fn dim(&self) -> usize;

    /// The constant delay, strictly positive.
    fn tau(&self) -> f64;

    /// Writes `g(t, z, v)` into `out`, where `v = z(t - tau)`.
    fn eval(&self, t: f64, z: &[f64], v: &[f64], out: &mut [f64]);
}

/// Adapts a closure into a [`DelayRhs`].
pub struct FnRhs<F> {
    dim: usize,
    tau: f64,
    f: F,
}

impl<F> FnRhs<F>
where
    F: Fn(f64, &[f64], &[f64], &mut [f64]),
{
    pub fn new(dim: usize, tau: f64, f: F) -> Self {
        Self { dim, tau, f }
    }
}

impl<F> DelayRhs for FnRhs<F>
where
    F: Fn(f64, &[f64], &[f64], &mut [f64]),
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn tau(&self) -> f64 {
        self.tau
    }

    fn eval(&self, t: f64, z: &[f64], v: &[f64], out: &mut [f64]) {
        (self.f)(t, z, v, out)
    }
}

/// The prescribed state for `t <= t0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum History {
    Constant(Vec<f64>),
}

impl History {
    pub fn constant(value: Vec<f64>) -> Self {
        History::Constant(value)
    }

    pub fn dim(&self) -> usize {
        match self {
            History::Constant(v) => v.len(),
        }
    }

    pub fn value_at(&self, _t: f64) -> &[f64] {
        match self {
            History::Constant(v) => v,
        }
    }
}

/// Accepted solver knots with linear dense output.
///
/// Knot times are strictly increasing and the first knot sits at `t0`. The
/// same structure serves as the checkpoint store for the adjoint pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    dim: usize,
    t0: f64,
    history: History,
    times: Vec<f64>,
    states: Vec<f64>,
}

impl Trajectory {
    /// Starts a trajectory whose first knot is the history value at `t0`.
    pub fn new(t0: f64, history: History) -> Result<Self> {
        let dim = history.dim();
        if dim == 0 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: 0,
            });
        }
        let z0 = history.value_at(t0).to_vec();
        if !all_finite(&z0) {
            return Err(Error::NonFiniteState(t0));
        }
        Ok(Self {
            dim,
            t0,
            history,
            times: vec![t0],
            states: z0,
        })
    }

    /// Builds a trajectory from explicit knots; the first knot must be at `t0`.
    pub fn from_knots(t0: f64, history: History, times: &[f64], states: &[Vec<f64>]) -> Result<Self> {
        if times.len() != states.len() || times.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: times.len(),
                got: states.len(),
            });
        }
        if times[0] != t0 {
            return Err(Error::InvalidConfig(format!(
                "first knot at {} but t0 = {t0}",
                times[0]
            )));
        }
        let dim = history.dim();
        let mut traj = Self {
            dim,
            t0,
            history,
            times: Vec::with_capacity(times.len()),
            states: Vec::with_capacity(times.len() * dim),
        };
        for (&t, z) in times.iter().zip(states) {
            if traj.times.is_empty() {
                check_dim(dim, z.len())?;
                traj.times.push(t);
                traj.states.extend_from_slice(z);
            } else {
                traj.push(t, z)?;
            }
        }
        Ok(traj)
    }

    /// Appends an accepted knot. Times must strictly increase.
    pub fn push(&mut self, t: f64, z: &[f64]) -> Result<()> {
        check_dim(self.dim, z.len())?;
        let last = self.last_time();
        if !(t > last) {
            return Err(Error::InvalidConfig(format!(
                "knot time {t} does not follow {last}"
            )));
        }
        if !all_finite(z) {
            return Err(Error::NonFiniteState(t));
        }
        self.times.push(t);
        self.states.extend_from_slice(z);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn states(&self) -> impl Iterator<Item = &[f64]> {
        self.states.chunks_exact(self.dim)
    }

    pub fn last_time(&self) -> f64 {
        *self.times.last().expect("trajectory has at least one knot")
    }

    pub fn last_state(&self) -> &[f64] {
        self.state(self.times.len() - 1)
    }

    /// Index of the knot sitting exactly at `t`, if any.
    pub fn knot_index(&self, t: f64) -> Option<usize> {
        self.times
            .binary_search_by(|probe| probe.total_cmp(&t))
            .ok()
    }

    /// Writes `z(t)` into `out`: the history for `t <= t0`, the knot itself at a
    /// knot time, and the linear interpolant between adjacent knots otherwise.
    pub fn interpolate_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        if t <= self.t0 {
            out.copy_from_slice(self.history.value_at(t));
            return Ok(());
        }
        let last = self.last_time();
        if t > last {
            return Err(Error::QueryBeyondTrajectory { t, last });
        }
        // first knot with time >= t; exists because t <= last
        let k = self.times.partition_point(|&tk| tk < t);
        let tk = self.times[k];
        if tk == t {
            out.copy_from_slice(self.state(k));
            return Ok(());
        }
        let i = k - 1;
        let ti = self.times[i];
        let w = (t - ti) / (tk - ti);
        let zi = self.state(i);
        let zk = self.state(k);
        for ((o, a), b) in out.iter_mut().zip(zi).zip(zk) {
            *o = a + (b - a) * w;
        }
        Ok(())
    }

    pub fn interpolate(&self, t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        self.interpolate_into(t, &mut out)?;
        Ok(out)
    }
}

/// Step-size controller settings for the adaptive solver.
///
/// `h_max` defaults to infinity; the solver additionally caps every step at
/// the delay, so the effective default maximum is `tau`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: f64,
    pub h_min: f64,
    #[serde(skip_serializing_if = "is_unbounded")]
    pub h_max: f64,
    pub safety: f64,
    pub max_steps: usize,
}

fn is_unbounded(x: &f64) -> bool {
    x.is_infinite()
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rtol: 1e-6,
            atol: 1e-6,
            h_init: 1e-2,
            h_min: 1e-10,
            h_max: f64::INFINITY,
            safety: 0.9,
            max_steps: 200_000,
        }
    }
}

impl SolverConfig {
    pub fn with_tolerances(rtol: f64, atol: f64) -> Self {
        Self {
            rtol,
            atol,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.h_min > 0.0
            && self.h_min <= self.h_init
            && self.h_init <= self.h_max
            && self.rtol > 0.0
            && self.atol > 0.0
            && self.safety > 0.0
            && self.safety <= 1.0
            && self.max_steps > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid solver config {self:?}")))
        }
    }
}

/// How a solve advances in time.
#[derive(Debug, Clone, PartialEq)]
pub enum StepMode {
    /// Constant step `h`, truncated to land on mandatory times.
    Fixed { h: f64 },
    /// Error-controlled RK12.
    Adaptive(SolverConfig),
}

/// Outcome of one RK12 trial step.
#[derive(Debug, Clone, PartialEq)]
pub struct Rk12Step {
    pub z_new: Vec<f64>,
    pub err: Vec<f64>,
}

/// Controller verdict for a trial step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDecision {
    pub accept: bool,
    pub h_next: f64,
}

const GROWTH_MIN: f64 = 0.2;
const GROWTH_MAX: f64 = 5.0;

/// Scratch buffers for RK12 stages.
struct Rk12Work {
    delayed: Vec<f64>,
    k1: Vec<f64>,
    k2: Vec<f64>,
    trial: Vec<f64>,
    z_new: Vec<f64>,
    err: Vec<f64>,
}

impl Rk12Work {
    fn new(d: usize) -> Self {
        Self {
            delayed: vec![0.0; d],
            k1: vec![0.0; d],
            k2: vec![0.0; d],
            trial: vec![0.0; d],
            z_new: vec![0.0; d],
            err: vec![0.0; d],
        }
    }

    /// One Heun step from the last knot of `traj`, Euler embedded for the error.
    fn step<R: DelayRhs + ?Sized>(&mut self, rhs: &R, traj: &Trajectory, h: f64) -> Result<()> {
        let tau = rhs.tau();
        if h > tau {
            return Err(Error::StepExceedsDelay { h, tau });
        }
        let t = traj.last_time();
        let z = traj.last_state();
        traj.interpolate_into(t - tau, &mut self.delayed)?;
        rhs.eval(t, z, &self.delayed, &mut self.k1);
        for ((p, zi), k) in self.trial.iter_mut().zip(z).zip(&self.k1) {
            *p = zi + h * k;
        }
        traj.interpolate_into(t - (tau - h), &mut self.delayed)?;
        rhs.eval(t + h, &self.trial, &self.delayed, &mut self.k2);
        for j in 0..z.len() {
            self.z_new[j] = z[j] + h * (0.5 * self.k1[j] + 0.5 * self.k2[j]);
            self.err[j] = -0.5 * h * self.k1[j] + 0.5 * h * self.k2[j];
        }
        Ok(())
    }
}

/// One RK12 step of size `h` starting at the last knot of `traj`.
///
/// `k1 = g(t, z, z(t - tau))`, `k2 = g(t + h, z + h k1, z(t + h - tau))`,
/// `z_new = z + h (k1 + k2) / 2` and `err = h (k2 - k1) / 2`.
pub fn rk12_step<R: DelayRhs + ?Sized>(rhs: &R, traj: &Trajectory, h: f64) -> Result<Rk12Step> {
    check_dim(traj.dim(), rhs.dim())?;
    let mut work = Rk12Work::new(traj.dim());
    work.step(rhs, traj, h)?;
    Ok(Rk12Step {
        z_new: work.z_new,
        err: work.err,
    })
}

/// RMS of `err_j / (atol + rtol * max(|z_old_j|, |z_new_j|))`.
pub fn scaled_error_norm(err: &[f64], z_old: &[f64], z_new: &[f64], rtol: f64, atol: f64) -> f64 {
    let sum: f64 = err
        .iter()
        .zip(z_old)
        .zip(z_new)
        .map(|((e, a), b)| {
            let sc = atol + rtol * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum();
    (sum / err.len() as f64).sqrt()
}

/// Accept/reject a trial step and propose the next step size.
///
/// The growth factor `safety * E^(-1/2)` is clamped to `[0.2, 5]`; the result
/// is clamped to `[h_min, h_max]`. Capping at the delay is left to the caller.
pub fn adapt_step(err: &[f64], z_old: &[f64], z_new: &[f64], h: f64, cfg: &SolverConfig) -> StepDecision {
    let e = scaled_error_norm(err, z_old, z_new, cfg.rtol, cfg.atol);
    decide(e, h, cfg)
}

pub(crate) fn decide(e: f64, h: f64, cfg: &SolverConfig) -> StepDecision {
    let factor = if e == 0.0 {
        GROWTH_MAX
    } else {
        (cfg.safety * e.powf(-0.5)).clamp(GROWTH_MIN, GROWTH_MAX)
    };
    StepDecision {
        accept: e <= 1.0,
        h_next: (h * factor).clamp(cfg.h_min, cfg.h_max),
    }
}

/// Sorted targets the solver must land on exactly, ending at `t_end`.
pub(crate) fn landing_targets(t0: f64, t_end: f64, mandatory: &[f64]) -> Result<Vec<f64>> {
    if !(t_end > t0) {
        return Err(Error::InvalidConfig(format!(
            "empty interval [{t0}, {t_end}]"
        )));
    }
    let mut targets = Vec::with_capacity(mandatory.len() + 1);
    for &m in mandatory {
        if !(m > t0 && m <= t_end) {
            return Err(Error::InvalidConfig(format!(
                "mandatory time {m} outside ({t0}, {t_end}]"
            )));
        }
        if let Some(&prev) = targets.last() {
            if m < prev {
                return Err(Error::InvalidConfig(
                    "mandatory times must be sorted".to_string(),
                ));
            }
            if m == prev {
                continue;
            }
        }
        targets.push(m);
    }
    if targets.last() != Some(&t_end) {
        targets.push(t_end);
    }
    Ok(targets)
}

/// Whether a step of nominal size `h` should be truncated to land on a target
/// `remaining` away. Tiny leftovers are absorbed into the landing step.
pub(crate) fn landing_step(remaining: f64, h: f64, cap: f64) -> Option<f64> {
    if remaining <= h * (1.0 + 1e-9) && remaining <= cap {
        Some(remaining)
    } else {
        None
    }
}

/// Adaptive RK12 solve on `[t0, t_end]`; every mandatory time becomes a knot.
pub fn solve_dde<R: DelayRhs + ?Sized>(
    rhs: &R,
    history: History,
    t0: f64,
    t_end: f64,
    cfg: &SolverConfig,
    mandatory_times: &[f64],
) -> Result<Trajectory> {
    cfg.validate()?;
    let tau = rhs.tau();
    check_tau(tau)?;
    let targets = landing_targets(t0, t_end, mandatory_times)?;
    let mut traj = Trajectory::new(t0, history)?;
    check_dim(traj.dim(), rhs.dim())?;
    let mut work = Rk12Work::new(traj.dim());
    let cap = cfg.h_max.min(tau);
    let mut h = cfg.h_init.min(cap);
    let mut attempts = 0usize;

    for &target in &targets {
        while traj.last_time() < target {
            attempts += 1;
            if attempts > cfg.max_steps {
                return Err(Error::MaxStepsExceeded(cfg.max_steps));
            }
            let t = traj.last_time();
            let landing = landing_step(target - t, h, cap);
            let step = landing.unwrap_or(h);
            debug_assert!(step <= tau);
            work.step(rhs, &traj, step)?;
            let t_new = if landing.is_some() { target } else { t + step };
            if !all_finite(&work.z_new) {
                return Err(Error::NonFiniteState(t_new));
            }
            let decision = adapt_step(&work.err, traj.last_state(), &work.z_new, step, cfg);
            if decision.accept {
                traj.push(t_new, &work.z_new)?;
                // a truncated landing step says nothing about the untried size h
                h = if landing.is_some() && step < h {
                    decision.h_next.max(h)
                } else {
                    decision.h_next
                }
                .min(cap);
            } else {
                if step <= cfg.h_min * (1.0 + 1e-12) {
                    return Err(Error::StepUnderflow { t, h: step });
                }
                h = decision.h_next.min(cap).min(step);
            }
        }
    }
    Ok(traj)
}

/// Fixed-step RK12 (Heun) solve. Steps are `h` long except where truncated to
/// land on a mandatory time; grid points are measured from the last landing
/// so rounding does not accumulate.
pub fn solve_dde_fixed<R: DelayRhs + ?Sized>(
    rhs: &R,
    history: History,
    t0: f64,
    t_end: f64,
    h: f64,
    mandatory_times: &[f64],
) -> Result<Trajectory> {
    let tau = rhs.tau();
    check_tau(tau)?;
    if !(h > 0.0) {
        return Err(Error::InvalidConfig(format!("step size {h} must be positive")));
    }
    if h > tau {
        return Err(Error::StepExceedsDelay { h, tau });
    }
    let targets = landing_targets(t0, t_end, mandatory_times)?;
    let mut traj = Trajectory::new(t0, history)?;
    check_dim(traj.dim(), rhs.dim())?;
    let mut work = Rk12Work::new(traj.dim());

    let mut anchor = t0;
    for &target in &targets {
        let mut k = 0u64;
        while traj.last_time() < target {
            let t = traj.last_time();
            let (step, t_new) = match landing_step(target - t, h, tau) {
                Some(rem) => (rem, target),
                None => {
                    k += 1;
                    let t_new = anchor + k as f64 * h;
                    (t_new - t, t_new)
                }
            };
            work.step(rhs, &traj, step)?;
            if !all_finite(&work.z_new) {
                return Err(Error::NonFiniteState(t_new));
            }
            traj.push(t_new, &work.z_new)?;
        }
        anchor = target;
    }
    Ok(traj)
}

/// Dispatches on [`StepMode`].
pub fn solve<R: DelayRhs + ?Sized>(
    rhs: &R,
    history: History,
    t0: f64,
    t_end: f64,
    mode: &StepMode,
    mandatory_times: &[f64],
) -> Result<Trajectory> {
    match mode {
        StepMode::Fixed { h } => solve_dde_fixed(rhs, history, t0, t_end, *h, mandatory_times),
        StepMode::Adaptive(cfg) => solve_dde(rhs, history, t0, t_end, cfg, mandatory_times),
    }
}

/// Classical four-stage RK4 on a uniform grid `t0 + i h`; the final step is
/// shortened to land on `t_end`. Delayed stage values come from linear
/// interpolation of the knots computed so far.
pub fn solve_fixed_rk4<R: DelayRhs + ?Sized>(
    rhs: &R,
    history: History,
    t0: f64,
    t_end: f64,
    h: f64,
) -> Result<Trajectory> {
    let tau = rhs.tau();
    check_tau(tau)?;
    if !(h > 0.0) {
        return Err(Error::InvalidConfig(format!("step size {h} must be positive")));
    }
    if h > tau {
        return Err(Error::StepExceedsDelay { h, tau });
    }
    if !(t_end > t0) {
        return Err(Error::InvalidConfig(format!(
            "empty interval [{t0}, {t_end}]"
        )));
    }
    let mut traj = Trajectory::new(t0, history)?;
    let d = traj.dim();
    check_dim(d, rhs.dim())?;
    let n = ((t_end - t0) / h * (1.0 - 1e-12)).ceil() as u64;
    let mut k = [vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]];
    let mut delayed = vec![0.0; d];
    let mut trial = vec![0.0; d];
    let mut z_new = vec![0.0; d];

    for i in 1..=n {
        let t = traj.last_time();
        let t_new = if i == n { t_end } else { t0 + i as f64 * h };
        let step = t_new - t;
        let z = traj.last_state();

        traj.interpolate_into(t - tau, &mut delayed)?;
        rhs.eval(t, z, &delayed, &mut k[0]);

        traj.interpolate_into(t - (tau - 0.5 * step), &mut delayed)?;
        axpy_into(&mut trial, z, 0.5 * step, &k[0]);
        rhs.eval(t + 0.5 * step, &trial, &delayed, &mut k[1]);
        axpy_into(&mut trial, z, 0.5 * step, &k[1]);
        rhs.eval(t + 0.5 * step, &trial, &delayed, &mut k[2]);

        traj.interpolate_into(t - (tau - step), &mut delayed)?;
        axpy_into(&mut trial, z, step, &k[2]);
        rhs.eval(t_new, &trial, &delayed, &mut k[3]);

        for j in 0..d {
            z_new[j] = z[j] + step / 6.0 * (k[0][j] + 2.0 * k[1][j] + 2.0 * k[2][j] + k[3][j]);
        }
        if !all_finite(&z_new) {
            return Err(Error::NonFiniteState(t_new));
        }
        traj.push(t_new, &z_new)?;
    }
    Ok(traj)
}

fn axpy_into(out: &mut [f64], z: &[f64], a: f64, k: &[f64]) {
    for ((o, zi), ki) in out.iter_mut().zip(z).zip(k) {
        *o = zi + a * ki;
    }
}

pub(crate) fn all_finite(x: &[f64]) -> bool {
    x.iter().all(|v| v.is_finite())
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("delay {tau} must be positive")))
    }
}
