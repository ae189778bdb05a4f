//! Python bindings for `ddnn`.

#![allow(clippy::too_many_arguments, clippy::type_complexity)]

use ddnn::config::RunConfig;
use ddnn::datagen;
use ddnn::gradcheck::{gradcheck as run_gradcheck, GradcheckConfig};
use ddnn::trainer::{self, Dataset};
use ddnn::{Combine, History, ObservationSet, SolverConfig, StepMode, Trajectory};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(err: ddnn::Error) -> PyErr {
    match err {
        ddnn::Error::InvalidConfig(_) | ddnn::Error::EmptySplit(_) => PyValueError::new_err(err.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn parse_combine(name: &str) -> PyResult<Combine> {
    match name {
        "concat" => Ok(Combine::Concat),
        "convex" => Ok(Combine::Convex),
        other => Err(PyValueError::new_err(format!("unknown combine mode {other:?}"))),
    }
}

fn knots(traj: &Trajectory) -> (Vec<f64>, Vec<Vec<f64>>) {
    (traj.times().to_vec(), traj.states().map(<[f64]>::to_vec).collect())
}

fn step_mode(h: Option<f64>, rtol: f64, atol: f64) -> StepMode {
    match h {
        Some(h) => StepMode::Fixed { h },
        None => StepMode::Adaptive(SolverConfig::with_tolerances(rtol, atol)),
    }
}

/// Neural delay vector field `f(t, z(t), z(t - tau); theta)`.
#[pyclass(name = "DelayField", module = "ddnn_py")]
struct PyDelayField {
    inner: ddnn::DelayField,
}

#[pymethods]
impl PyDelayField {
    /// `lam` is only used by the convex combine.
    #[new]
    #[pyo3(signature = (state_dim, hidden_dim, tau, combine = "convex", lam = 0.75, seed = 0))]
    fn new(state_dim: usize, hidden_dim: usize, tau: f64, combine: &str, lam: f64, seed: u64) -> PyResult<Self> {
        let spec = match parse_combine(combine)? {
            Combine::Concat => ddnn::DelayFieldSpec::concat(state_dim, hidden_dim, tau),
            Combine::Convex => ddnn::DelayFieldSpec::convex(state_dim, hidden_dim, lam, tau),
        };
        spec.validate().map_err(to_py)?;
        let theta = ddnn::init_params(&spec, seed);
        let inner = ddnn::DelayField::new(spec, theta).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn tau(&self) -> f64 {
        self.inner.spec().tau
    }

    #[getter]
    fn state_dim(&self) -> usize {
        self.inner.spec().state_dim
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.spec().param_count()
    }

    #[getter]
    fn theta(&self) -> Vec<f64> {
        self.inner.theta().0.clone()
    }

    #[setter]
    fn set_theta(&mut self, theta: Vec<f64>) -> PyResult<()> {
        let spec = self.inner.spec().clone();
        self.inner = ddnn::DelayField::new(spec, ddnn::ParamVec(theta)).map_err(to_py)?;
        Ok(())
    }

    fn eval(&self, t: f64, z: Vec<f64>, v: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self.inner.eval(t, &z, &v).map_err(to_py)?.0)
    }

    /// Returns `(a^T df/dz, a^T df/dv, a^T df/dtheta)`.
    fn vjp(&self, t: f64, z: Vec<f64>, v: Vec<f64>, a: Vec<f64>) -> PyResult<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let (_, cache) = self.inner.eval(t, &z, &v).map_err(to_py)?;
        let out = self.inner.vjp(&cache, &a).map_err(to_py)?;
        Ok((out.wrt_z, out.wrt_v, out.wrt_theta))
    }

    /// Solve from a constant history `z0` on `[0, t_end]`; every entry of
    /// `times` becomes a knot. Fixed step when `h` is given, adaptive otherwise.
    #[pyo3(signature = (z0, t_end, times = Vec::new(), h = None, rtol = 1e-6, atol = 1e-6))]
    fn solve(
        &self,
        py: Python<'_>,
        z0: Vec<f64>,
        t_end: f64,
        times: Vec<f64>,
        h: Option<f64>,
        rtol: f64,
        atol: f64,
    ) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
        let mode = step_mode(h, rtol, atol);
        let traj = py
            .detach(|| ddnn::solve(&self.inner, History::constant(z0), 0.0, t_end, &mode, &times))
            .map_err(to_py)?;
        Ok(knots(&traj))
    }

    /// Adjoint gradient of a loss whose gradient with respect to the state at
    /// `times[k]` is `loss_grads[k]`.
    #[pyo3(signature = (z0, times, loss_grads, h = None, rtol = 1e-6, atol = 1e-6))]
    fn gradient(
        &self,
        py: Python<'_>,
        z0: Vec<f64>,
        times: Vec<f64>,
        loss_grads: Vec<Vec<f64>>,
        h: Option<f64>,
        rtol: f64,
        atol: f64,
    ) -> PyResult<Vec<f64>> {
        let t_end = times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !t_end.is_finite() {
            return Err(PyValueError::new_err("times must be non-empty and finite"));
        }
        let mode = step_mode(h, rtol, atol);
        py.detach(|| {
            let fwd = ddnn::solve(&self.inner, History::constant(z0), 0.0, t_end, &mode, &times)?;
            let obs = ObservationSet::new(times, loss_grads, 0.0)?;
            ddnn::backward_pass(&fwd, &self.inner, &obs, &mode)
        })
        .map(|g| g.grad_theta)
        .map_err(to_py)
    }

    fn __repr__(&self) -> String {
        let spec = self.inner.spec();
        format!(
            "DelayField(state_dim={}, hidden_dim={}, tau={}, combine={:?}, lambda={})",
            spec.state_dim, spec.hidden_dim, spec.tau, spec.combine, spec.lambda
        )
    }
}

/// Adaptive solve of `dz/dt = a z(t) (1 - z(t - 1))` with `z = 0.1` for `t <= 0`.
#[pyfunction]
#[pyo3(signature = (a, t_end, rtol = 1e-6, atol = 1e-6))]
fn solve_delay_logistic(py: Python<'_>, a: f64, t_end: f64, rtol: f64, atol: f64) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
    let rhs = ddnn::FnRhs::new(1, 1.0, move |_t, z: &[f64], v: &[f64], out: &mut [f64]| {
        out[0] = a * z[0] * (1.0 - v[0]);
    });
    let cfg = SolverConfig::with_tolerances(rtol, atol);
    let traj = py
        .detach(|| ddnn::solve_dde(&rhs, History::constant(vec![0.1]), 0.0, t_end, &cfg, &[]))
        .map_err(to_py)?;
    Ok(knots(&traj))
}

/// Toy linear DDE samples as `(times, values, splits)`.
#[pyfunction]
#[pyo3(signature = (n = 1000))]
fn toy_series(n: usize) -> PyResult<(Vec<f64>, Vec<Vec<f64>>, Vec<&'static str>)> {
    let data = datagen::gen_toy_linear_dde(n).map_err(to_py)?;
    let splits = data.splits.unwrap_or_default().into_iter().map(|s| s.name()).collect();
    Ok((data.times, data.values, splits))
}

#[pyfunction]
#[pyo3(signature = (n = 400, seed = 0, noise = 0.1))]
fn two_circles(n: usize, seed: u64, noise: f64) -> PyResult<(Vec<[f64; 2]>, Vec<usize>)> {
    let data = datagen::gen_two_circles(n, seed, noise).map_err(to_py)?;
    Ok((data.points, data.labels))
}

fn parse_config(config_json: &str) -> PyResult<RunConfig> {
    RunConfig::from_json(config_json).map_err(to_py)
}

/// Train from a JSON run config; returns the report as a dict with `theta`.
#[pyfunction]
fn train<'py>(py: Python<'py>, config_json: &str) -> PyResult<Bound<'py, PyDict>> {
    let cfg = parse_config(config_json)?;
    let report = py
        .detach(|| trainer::load_dataset(&cfg.dataset).and_then(|data| trainer::run(&cfg, &data)))
        .map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("train_loss", &report.train_loss)?;
    out.set_item("final_train_loss", report.final_train_loss)?;
    out.set_item("final_val_mse", report.final_val_mse)?;
    out.set_item("final_test_mse", report.final_test_mse)?;
    out.set_item("train_accuracy", report.train_accuracy)?;
    out.set_item("diverged", report.diverged)?;
    out.set_item("failure", &report.failure)?;
    out.set_item("wall_clock_seconds", report.wall_clock_seconds)?;
    out.set_item("theta", &report.theta.0)?;
    Ok(out)
}

/// Delay sweep over `tau_candidates`; returns `(rows, best_tau)` with rows
/// `(tau, val_mse, test_mse)` sorted by tau.
#[pyfunction]
#[pyo3(signature = (config_json, threads = 1))]
fn sweep(py: Python<'_>, config_json: &str, threads: usize) -> PyResult<(Vec<(f64, f64, f64)>, Option<f64>)> {
    let cfg = parse_config(config_json)?;
    let table = py
        .detach(|| match trainer::load_dataset(&cfg.dataset)? {
            Dataset::Series(data) => ddnn::delay_sweep(&cfg, &data, threads),
            Dataset::Points(_) => Err(ddnn::Error::InvalidConfig("a sweep needs a trajectory dataset".into())),
        })
        .map_err(to_py)?;
    let rows = table.rows.iter().map(|r| (r.tau, r.val_mse, r.test_mse)).collect();
    Ok((rows, table.best_tau))
}

/// Adjoint vs central-difference check on one seed: `(max_rel, median_rel)`.
#[pyfunction]
#[pyo3(signature = (mode, seed = 0, h = 1e-3))]
fn gradcheck(py: Python<'_>, mode: &str, seed: u64, h: f64) -> PyResult<(f64, f64)> {
    let cfg = GradcheckConfig::new(parse_combine(mode)?, h);
    let report = py.detach(|| run_gradcheck(&cfg, seed)).map_err(to_py)?;
    Ok((report.max_rel, report.median_rel))
}

#[pymodule]
fn ddnn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDelayField>()?;
    m.add_function(wrap_pyfunction!(solve_delay_logistic, m)?)?;
    m.add_function(wrap_pyfunction!(toy_series, m)?)?;
    m.add_function(wrap_pyfunction!(two_circles, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
