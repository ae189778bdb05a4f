//! Training loops and the delay sweep.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adjoint::{backward_pass, ObservationSet};
use crate::config::{DatasetConfig, RunConfig};
use crate::datagen::{gen_toy_linear_dde, gen_two_circles, ClassificationSet, LabeledSeries, Split};
use crate::error::{Error, Result};
use crate::field::{init_params, DelayField, DelayFieldSpec, ParamVec};
use crate::loss::{cross_entropy, mse, trajectory_mse};
use crate::optim::{adam_step, AdamState};
use crate::solver::{solve, History, StepMode, Trajectory};

/// Outcome of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Training loss before each update.
    pub train_loss: Vec<f64>,
    /// Losses of the final parameters; `None` after divergence or when the
    /// dataset has no such split.
    pub final_train_loss: Option<f64>,
    pub final_val_mse: Option<f64>,
    pub final_test_mse: Option<f64>,
    #[serde(default)]
    pub train_accuracy: Option<f64>,
    pub diverged: bool,
    #[serde(default)]
    pub failure: Option<String>,
    /// Excluded from serialised reports so reruns are byte-identical.
    #[serde(skip)]
    pub wall_clock_seconds: f64,
    #[serde(skip)]
    pub theta: ParamVec,
}

/// Errors that mean the run blew up rather than being misconfigured.
fn is_divergence(e: &Error) -> bool {
    matches!(
        e,
        Error::NonFiniteState(_)
            | Error::NonFiniteOutput(_)
            | Error::NonFiniteGradient
            | Error::StepUnderflow { .. }
            | Error::MaxStepsExceeded(_)
            | Error::InvalidConfig(_)
    )
}

/// Trajectory-fitting problem over one labelled series.
struct FitProblem<'a> {
    spec: DelayFieldSpec,
    data: &'a LabeledSeries,
    mode: StepMode,
    z0: Vec<f64>,
    t0: f64,
    obs_times: Vec<f64>,
    obs_targets: Vec<Vec<f64>>,
}

impl<'a> FitProblem<'a> {
    fn new(cfg: &RunConfig, data: &'a LabeledSeries) -> Result<Self> {
        let train = data.indices(Split::Train);
        let first = *train.first().ok_or(Error::EmptySplit("train"))?;
        if data.indices(Split::Val).is_empty() {
            return Err(Error::EmptySplit("val"));
        }
        if data.indices(Split::Test).is_empty() {
            return Err(Error::EmptySplit("test"));
        }
        let t0 = data.times[first];
        // the first training sample is the initial condition, not an observation
        let (obs_times, obs_targets) = train
            .iter()
            .filter(|&&i| data.times[i] > t0)
            .map(|&i| (data.times[i], data.values[i].clone()))
            .unzip();
        Ok(Self {
            spec: cfg.field.clone(),
            data,
            mode: cfg.step_mode(),
            z0: data.values[first].clone(),
            t0,
            obs_times,
            obs_targets,
        })
    }

    fn forward(&self, field: &DelayField, t_end: f64, times: &[f64]) -> Result<Trajectory> {
        solve(field, History::constant(self.z0.clone()), self.t0, t_end, &self.mode, times)
    }

    fn states_at(traj: &Trajectory, times: &[f64]) -> Result<Vec<Vec<f64>>> {
        times
            .iter()
            .map(|&t| {
                traj.knot_index(t)
                    .map(|i| traj.state(i).to_vec())
                    .ok_or(Error::ObservationNotOnKnot(t))
            })
            .collect()
    }

    /// Training loss and gradient.
    fn loss_and_grad(&self, theta: &ParamVec) -> Result<(f64, Vec<f64>)> {
        let field = DelayField::new(self.spec.clone(), theta.clone())?;
        let t_end = *self.obs_times.last().ok_or(Error::EmptySplit("train"))?;
        let traj = self.forward(&field, t_end, &self.obs_times)?;
        let pred = Self::states_at(&traj, &self.obs_times)?;
        let (loss, grads) = trajectory_mse(&self.obs_times, &pred, &self.obs_times, &self.obs_targets)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteState(t_end));
        }
        let obs = ObservationSet::new(self.obs_times.clone(), grads, loss)?;
        let res = backward_pass(&traj, &field, &obs, &self.mode)?;
        Ok((loss, res.grad_theta))
    }

    /// Prediction at every sample time after `t0`, plus the initial state.
    fn predict_all(&self, theta: &ParamVec) -> Result<Vec<Vec<f64>>> {
        let field = DelayField::new(self.spec.clone(), theta.clone())?;
        let times: Vec<f64> = self.data.times.iter().copied().filter(|&t| t > self.t0).collect();
        let t_end = *times.last().ok_or(Error::EmptySplit("test"))?;
        let traj = self.forward(&field, t_end, &times)?;
        self.data
            .times
            .iter()
            .map(|&t| {
                if t <= self.t0 {
                    Ok(self.z0.clone())
                } else {
                    traj.knot_index(t)
                        .map(|i| traj.state(i).to_vec())
                        .ok_or(Error::ObservationNotOnKnot(t))
                }
            })
            .collect()
    }

    fn split_mse(&self, pred: &[Vec<f64>], split: Split) -> f64 {
        let idx = self.data.indices(split);
        let (p, y): (Vec<Vec<f64>>, Vec<Vec<f64>>) = idx
            .iter()
            .filter(|&&i| self.data.times[i] > self.t0)
            .map(|&i| (pred[i].clone(), self.data.values[i].clone()))
            .unzip();
        mse(&p, &y)
    }
}

/// Predicts the whole series from its first training sample with `theta`.
pub fn predict_series(cfg: &RunConfig, data: &LabeledSeries, theta: &ParamVec) -> Result<Vec<Vec<f64>>> {
    FitProblem::new(cfg, data)?.predict_all(theta)
}

/// Full-batch trajectory fitting with Adam and adjoint gradients.
///
/// The model starts from the first training sample with a constant history,
/// is fitted on the remaining training times, and is then rolled out over
/// the full time range to score the validation and test samples.
pub fn train_trajectory(cfg: &RunConfig, data: &LabeledSeries) -> Result<FitReport> {
    cfg.validate()?;
    let start = Instant::now();
    let problem = FitProblem::new(cfg, data)?;
    let mut theta = init_params(&cfg.field, cfg.seed);
    let mut adam = AdamState::new(theta.len());
    let mut train_loss = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        match problem.loss_and_grad(&theta) {
            Ok((loss, grad)) => {
                train_loss.push(loss);
                adam_step(&mut theta.0, &grad, &mut adam, cfg.lr, &cfg.adam);
                if !theta.0.iter().all(|x| x.is_finite()) {
                    return Ok(diverged(train_loss, theta, start, "non-finite parameters".into()));
                }
            }
            Err(e) if is_divergence(&e) => {
                return Ok(diverged(train_loss, theta, start, e.to_string()));
            }
            Err(e) => return Err(e),
        }
    }

    let pred = match problem.predict_all(&theta) {
        Ok(p) => p,
        Err(e) if is_divergence(&e) => return Ok(diverged(train_loss, theta, start, e.to_string())),
        Err(e) => return Err(e),
    };
    let report = FitReport {
        final_train_loss: Some(problem.split_mse(&pred, Split::Train)),
        final_val_mse: Some(problem.split_mse(&pred, Split::Val)),
        final_test_mse: Some(problem.split_mse(&pred, Split::Test)),
        train_loss,
        train_accuracy: None,
        diverged: false,
        failure: None,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        theta,
    };
    if ![report.final_train_loss, report.final_val_mse, report.final_test_mse]
        .iter()
        .all(|x| x.is_some_and(f64::is_finite))
    {
        let FitReport { train_loss, theta, .. } = report;
        return Ok(diverged(train_loss, theta, start, "non-finite evaluation loss".into()));
    }
    Ok(report)
}

fn diverged(train_loss: Vec<f64>, theta: ParamVec, start: Instant, why: String) -> FitReport {
    FitReport {
        train_loss,
        final_train_loss: None,
        final_val_mse: None,
        final_test_mse: None,
        train_accuracy: None,
        diverged: true,
        failure: Some(why),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        theta,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub tau: f64,
    pub val_mse: f64,
    pub test_mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    /// One row per candidate, sorted by `tau`.
    pub rows: Vec<SweepRow>,
    /// Candidate with the lowest validation MSE, if any run finished.
    pub best_tau: Option<f64>,
}

impl SweepTable {
    pub fn from_rows(mut rows: Vec<SweepRow>) -> Self {
        rows.sort_by(|a, b| a.tau.total_cmp(&b.tau));
        let best_tau = rows
            .iter()
            .filter(|r| r.val_mse.is_finite())
            .min_by(|a, b| a.val_mse.total_cmp(&b.val_mse))
            .map(|r| r.tau);
        Self { rows, best_tau }
    }
}

fn sweep_row(cfg: &RunConfig, data: &LabeledSeries, tau: f64) -> SweepRow {
    let report = train_trajectory(&cfg.with_tau(tau), data);
    let (val_mse, test_mse) = match report {
        Ok(r) if !r.diverged => (
            r.final_val_mse.unwrap_or(f64::INFINITY),
            r.final_test_mse.unwrap_or(f64::INFINITY),
        ),
        _ => (f64::INFINITY, f64::INFINITY),
    };
    SweepRow { tau, val_mse, test_mse }
}

/// Trains one model per delay candidate with identical seed and budget.
///
/// Runs are independent, so they are fanned out over `threads` workers;
/// the table does not depend on the thread count or candidate order.
pub fn delay_sweep(cfg: &RunConfig, data: &LabeledSeries, threads: usize) -> Result<SweepTable> {
    cfg.validate()?;
    if cfg.tau_candidates.len() < 2 {
        return Err(Error::InvalidConfig("a sweep needs at least two tau candidates".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let rows = pool.install(|| {
        cfg.tau_candidates
            .par_iter()
            .map(|&tau| sweep_row(cfg, data, tau))
            .collect::<Vec<_>>()
    });
    Ok(SweepTable::from_rows(rows))
}

pub const NUM_CLASSES: usize = 2;

/// Parameter layout of the classifier: the delay field followed by a linear
/// readout `W_r` (`classes x d`, row-major) and `b_r`.
pub fn classifier_param_count(spec: &DelayFieldSpec) -> usize {
    spec.param_count() + NUM_CLASSES * spec.state_dim + NUM_CLASSES
}

/// Field parameters from `init_params`, Glorot-uniform readout weights from
/// a stream seeded with `seed + 1`, zero readout bias.
pub fn init_classifier(spec: &DelayFieldSpec, seed: u64) -> ParamVec {
    let mut theta = init_params(spec, seed).0;
    let d = spec.state_dim;
    let s = (6.0 / (d + NUM_CLASSES) as f64).sqrt();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed.wrapping_add(1));
    theta.extend((0..NUM_CLASSES * d).map(|_| rng.random_range(-s..s)));
    theta.extend(std::iter::repeat_n(0.0, NUM_CLASSES));
    ParamVec(theta)
}

struct Classifier<'a> {
    spec: DelayFieldSpec,
    data: &'a ClassificationSet,
    mode: StepMode,
    horizon: f64,
}

impl Classifier<'_> {
    fn embed(&self, x: &[f64; 2]) -> Vec<f64> {
        let mut z = vec![0.0; self.spec.state_dim];
        z[..2].copy_from_slice(x);
        z
    }

    fn split<'t>(&self, theta: &'t [f64]) -> (&'t [f64], &'t [f64], &'t [f64]) {
        let p = self.spec.param_count();
        let d = self.spec.state_dim;
        let (field, rest) = theta.split_at(p);
        let (w, b) = rest.split_at(NUM_CLASSES * d);
        (field, w, b)
    }

    fn logits(&self, w: &[f64], b: &[f64], z: &[f64]) -> Vec<f64> {
        let d = self.spec.state_dim;
        (0..NUM_CLASSES)
            .map(|c| b[c] + w[c * d..(c + 1) * d].iter().zip(z).map(|(a, x)| a * x).sum::<f64>())
            .collect()
    }

    /// Mean cross-entropy, its gradient, and training accuracy.
    fn evaluate(&self, theta: &[f64], with_grad: bool) -> Result<(f64, Vec<f64>, f64)> {
        let (field_theta, w, b) = self.split(theta);
        let field = DelayField::new(self.spec.clone(), ParamVec(field_theta.to_vec()))?;
        let n = self.data.len() as f64;
        let d = self.spec.state_dim;
        let p = self.spec.param_count();
        let mut grad = vec![0.0; theta.len()];
        let mut loss = 0.0;
        let mut correct = 0usize;
        for (x, &label) in self.data.points.iter().zip(&self.data.labels) {
            let traj = solve(&field, History::constant(self.embed(x)), 0.0, self.horizon, &self.mode, &[])?;
            let z_end = traj.last_state();
            let logits = self.logits(w, b, z_end);
            let (l, g) = cross_entropy(&logits, label)?;
            loss += l / n;
            let predicted = if logits[1] > logits[0] { 1 } else { 0 };
            correct += usize::from(predicted == label);
            if !with_grad {
                continue;
            }
            let (_, rest) = grad.split_at_mut(p);
            let (gw, gb) = rest.split_at_mut(NUM_CLASSES * d);
            let mut dz = vec![0.0; d];
            for c in 0..NUM_CLASSES {
                gb[c] += g[c] / n;
                for j in 0..d {
                    gw[c * d + j] += g[c] * z_end[j] / n;
                    dz[j] += w[c * d + j] * g[c] / n;
                }
            }
            let obs = ObservationSet::new(vec![self.horizon], vec![dz], l / n)?;
            let res = backward_pass(&traj, &field, &obs, &self.mode)?;
            for (a, g) in grad[..p].iter_mut().zip(&res.grad_theta) {
                *a += g;
            }
        }
        if !loss.is_finite() {
            return Err(Error::NonFiniteState(self.horizon));
        }
        Ok((loss, grad, correct as f64 / n))
    }
}

/// Mean cross-entropy and accuracy of classifier parameters on `data`.
pub fn classifier_loss(cfg: &RunConfig, data: &ClassificationSet, theta: &ParamVec) -> Result<(f64, f64)> {
    let clf = Classifier {
        spec: cfg.field.clone(),
        data,
        mode: cfg.step_mode(),
        horizon: cfg.horizon,
    };
    let (loss, _, acc) = clf.evaluate(&theta.0, false)?;
    Ok((loss, acc))
}

/// Two-class classifier: inputs padded with zeros to the state dimension,
/// a delay block integrated over `[0, horizon]`, and a jointly trained linear
/// readout of the terminal state.
pub fn train_classifier(cfg: &RunConfig, data: &ClassificationSet) -> Result<FitReport> {
    cfg.validate()?;
    let start = Instant::now();
    let clf = Classifier {
        spec: cfg.field.clone(),
        data,
        mode: cfg.step_mode(),
        horizon: cfg.horizon,
    };
    let mut theta = init_classifier(&cfg.field, cfg.seed);
    let mut adam = AdamState::new(theta.len());
    let mut train_loss = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        match clf.evaluate(&theta.0, true) {
            Ok((loss, grad, _)) => {
                train_loss.push(loss);
                adam_step(&mut theta.0, &grad, &mut adam, cfg.lr, &cfg.adam);
            }
            Err(e) if is_divergence(&e) => return Ok(diverged(train_loss, theta, start, e.to_string())),
            Err(e) => return Err(e),
        }
    }
    let (final_loss, _, accuracy) = match clf.evaluate(&theta.0, false) {
        Ok(v) => v,
        Err(e) if is_divergence(&e) => return Ok(diverged(train_loss, theta, start, e.to_string())),
        Err(e) => return Err(e),
    };
    Ok(FitReport {
        train_loss,
        final_train_loss: Some(final_loss),
        final_val_mse: None,
        final_test_mse: None,
        train_accuracy: Some(accuracy),
        diverged: false,
        failure: None,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        theta,
    })
}

/// Dataset named by a config.
pub enum Dataset {
    Series(LabeledSeries),
    Points(ClassificationSet),
}

pub fn load_dataset(cfg: &DatasetConfig) -> Result<Dataset> {
    match cfg {
        DatasetConfig::Toy2d { n } => gen_toy_linear_dde(*n).map(Dataset::Series),
        DatasetConfig::TwoCircles { n, noise, seed } => gen_two_circles(*n, *seed, *noise).map(Dataset::Points),
    }
}

/// Trains whatever the config describes.
pub fn run(cfg: &RunConfig, data: &Dataset) -> Result<FitReport> {
    match data {
        Dataset::Series(s) => train_trajectory(cfg, s),
        Dataset::Points(p) => train_classifier(cfg, p),
    }
}
