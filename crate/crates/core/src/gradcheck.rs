//! Adjoint-versus-finite-difference check on the toy 2-D problem.

use crate::adjoint::{backward_pass, finite_diff_grad, relative_error, ObservationSet};
use crate::datagen::{toy_reference, TOY_HISTORY, TOY_TAU};
use crate::error::Result;
use crate::field::{init_params, Combine, DelayField, DelayFieldSpec, ParamVec};
use crate::loss::trajectory_mse;
use crate::solver::{solve_dde_fixed, History, StepMode, Trajectory};

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckConfig {
    pub combine: Combine,
    pub hidden_dim: usize,
    pub lambda: f64,
    pub tau: f64,
    /// Step of both the forward and the backward fixed-step solves.
    pub h: f64,
    pub obs_times: Vec<f64>,
    /// Central-difference half width.
    pub eps: f64,
    /// Components whose magnitude is below `floor * max|grad|` are compared
    /// on that absolute scale instead.
    pub floor: f64,
}

impl GradcheckConfig {
    pub fn new(combine: Combine, h: f64) -> Self {
        Self {
            combine,
            hidden_dim: 8,
            lambda: 0.75,
            tau: TOY_TAU,
            h,
            obs_times: vec![1.0, 2.0, 3.0, 4.0, 5.0],
            eps: 1e-5,
            floor: 1e-6,
        }
    }

    pub fn spec(&self) -> DelayFieldSpec {
        match self.combine {
            Combine::Concat => DelayFieldSpec::concat(2, self.hidden_dim, self.tau),
            Combine::Convex => DelayFieldSpec::convex(2, self.hidden_dim, self.lambda, self.tau),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub seed: u64,
    pub max_rel: f64,
    pub median_rel: f64,
    pub adjoint: Vec<f64>,
    pub finite_diff: Vec<f64>,
}

struct Problem {
    spec: DelayFieldSpec,
    obs_times: Vec<f64>,
    targets: Vec<Vec<f64>>,
    h: f64,
}

impl Problem {
    fn forward(&self, theta: &[f64]) -> Result<(DelayField, Trajectory)> {
        let field = DelayField::new(self.spec.clone(), ParamVec(theta.to_vec()))?;
        let t_end = *self.obs_times.last().expect("at least one observation");
        let traj = solve_dde_fixed(
            &field,
            History::constant(TOY_HISTORY.to_vec()),
            0.0,
            t_end,
            self.h,
            &self.obs_times,
        )?;
        Ok((field, traj))
    }

    fn loss(&self, traj: &Trajectory) -> Result<(f64, Vec<Vec<f64>>)> {
        let pred = self
            .obs_times
            .iter()
            .map(|&t| traj.interpolate(t))
            .collect::<Result<Vec<_>>>()?;
        trajectory_mse(&self.obs_times, &pred, &self.obs_times, &self.targets)
    }
}

/// Compares the adjoint gradient with central differences of the full
/// forward loss for one random initialisation.
pub fn gradcheck(cfg: &GradcheckConfig, seed: u64) -> Result<GradcheckReport> {
    let t_end = *cfg.obs_times.last().expect("at least one observation");
    let truth = toy_reference(t_end)?;
    let targets = cfg
        .obs_times
        .iter()
        .map(|&t| truth.interpolate(t))
        .collect::<Result<Vec<_>>>()?;
    let problem = Problem {
        spec: cfg.spec(),
        obs_times: cfg.obs_times.clone(),
        targets,
        h: cfg.h,
    };
    let theta = init_params(&problem.spec, seed);

    let (field, traj) = problem.forward(theta.as_slice())?;
    let (loss, grads) = problem.loss(&traj)?;
    let obs = ObservationSet::new(cfg.obs_times.clone(), grads, loss)?;
    let adjoint = backward_pass(&traj, &field, &obs, &StepMode::Fixed { h: cfg.h })?.grad_theta;

    let finite_diff = finite_diff_grad(
        |th| {
            problem
                .forward(th)
                .and_then(|(_, traj)| problem.loss(&traj))
                .map_or(f64::NAN, |(l, _)| l)
        },
        theta.as_slice(),
        cfg.eps,
    );

    let scale = finite_diff.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut rel: Vec<f64> = adjoint
        .iter()
        .zip(&finite_diff)
        .map(|(&a, &b)| relative_error(a, b, cfg.floor * scale))
        .collect();
    rel.sort_by(f64::total_cmp);
    let max_rel = rel.last().copied().unwrap_or(0.0);
    let median_rel = if rel.is_empty() { 0.0 } else { rel[rel.len() / 2] };
    Ok(GradcheckReport {
        seed,
        max_rel,
        median_rel,
        adjoint,
        finite_diff,
    })
}
