//! Ground-truth systems and synthetic datasets.

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solver::{solve_fixed_rk4, FnRhs, History, Trajectory};

/// Step of the fixed RK4 reference solve behind every generated series.
pub const REFERENCE_STEP: f64 = 1e-4;

/// Delay of the toy 2-D system.
pub const TOY_TAU: f64 = 2.5;
/// Constant history of the toy 2-D system.
pub const TOY_HISTORY: [f64; 2] = [-0.2, 0.1];
/// Mixing matrix of the toy system, applied as `z * A` with `z` a row vector.
pub const TOY_MATRIX: [[f64; 2]; 2] = [[-0.1, 3.2], [-3.2, -0.1]];
pub const TOY_T_END: f64 = 10.0;
/// Train/validation and validation/test time boundaries.
pub const TOY_SPLITS: (f64, f64) = (6.0, 8.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Time-stamped samples of a trajectory, optionally tagged by split.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSeries {
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub splits: Option<Vec<Split>>,
}

impl LabeledSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    /// Indices of the samples tagged `split`.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        match &self.splits {
            Some(tags) => tags
                .iter()
                .enumerate()
                .filter(|(_, &s)| s == split)
                .map(|(i, _)| i)
                .collect(),
            None => Vec::new(),
        }
    }

    pub fn counts(&self) -> (usize, usize, usize) {
        (
            self.indices(Split::Train).len(),
            self.indices(Split::Val).len(),
            self.indices(Split::Test).len(),
        )
    }
}

/// `n` uniform times on `[0, t_end]`, hitting both ends exactly.
pub fn uniform_times(t_end: f64, n: usize) -> Vec<f64> {
    let last = (n - 1) as f64;
    (0..n)
        .map(|i| if i + 1 == n { t_end } else { t_end * i as f64 / last })
        .collect()
}

fn sample(traj: &Trajectory, times: &[f64]) -> Result<Vec<Vec<f64>>> {
    times.iter().map(|&t| traj.interpolate(t)).collect()
}

/// Reference trajectory of `dz/dt = a z(t) (1 - z(t - 1))`, `z = 0.1` for `t <= 0`.
pub fn delay_logistic_reference(a: f64, t_end: f64) -> Result<Trajectory> {
    let rhs = FnRhs::new(1, 1.0, move |_t, z: &[f64], v: &[f64], out: &mut [f64]| {
        out[0] = a * z[0] * (1.0 - v[0]);
    });
    solve_fixed_rk4(&rhs, History::constant(vec![0.1]), 0.0, t_end, REFERENCE_STEP)
}

pub fn gen_delay_logistic(a: f64, t_end: f64, n: usize) -> Result<LabeledSeries> {
    if !(a > 0.0) || n < 2 {
        return Err(Error::InvalidConfig(format!(
            "delay logistic needs a > 0 and n >= 2 (a = {a}, n = {n})"
        )));
    }
    let traj = delay_logistic_reference(a, t_end)?;
    let times = uniform_times(t_end, n);
    let values = sample(&traj, &times)?;
    Ok(LabeledSeries {
        times,
        values,
        splits: None,
    })
}

/// Right-hand side `0.75 z(t) + 0.25 z(t - 2.5) A` of the toy system.
pub fn toy_rhs(t: f64, z: &[f64], v: &[f64], out: &mut [f64]) {
    let _ = t;
    let a = TOY_MATRIX;
    out[0] = 0.75 * z[0] + 0.25 * (v[0] * a[0][0] + v[1] * a[1][0]);
    out[1] = 0.75 * z[1] + 0.25 * (v[0] * a[0][1] + v[1] * a[1][1]);
}

pub fn toy_reference(t_end: f64) -> Result<Trajectory> {
    let rhs = FnRhs::new(2, TOY_TAU, toy_rhs);
    solve_fixed_rk4(&rhs, History::constant(TOY_HISTORY.to_vec()), 0.0, t_end, REFERENCE_STEP)
}

/// `n` uniform samples of the toy system on `[0, 10]`, split at `t = 6` and `t = 8`.
pub fn gen_toy_linear_dde(n: usize) -> Result<LabeledSeries> {
    if n < 10 {
        return Err(Error::InvalidConfig(format!("toy dataset needs n >= 10, got {n}")));
    }
    let traj = toy_reference(TOY_T_END)?;
    let times = uniform_times(TOY_T_END, n);
    let values = sample(&traj, &times)?;
    split_series(
        LabeledSeries {
            times,
            values,
            splits: None,
        },
        TOY_SPLITS,
    )
}

/// Tags `t <= t_a` train, `t_a < t <= t_b` validation, the rest test.
pub fn split_series(mut series: LabeledSeries, boundaries: (f64, f64)) -> Result<LabeledSeries> {
    let (t_a, t_b) = boundaries;
    let (first, last) = match (series.times.first(), series.times.last()) {
        (Some(&f), Some(&l)) => (f, l),
        _ => return Err(Error::EmptySplit("train")),
    };
    if !(first < t_a && t_a < t_b && t_b < last) {
        return Err(Error::InvalidConfig(format!(
            "split boundaries ({t_a}, {t_b}) must lie strictly inside ({first}, {last})"
        )));
    }
    let tags: Vec<Split> = series
        .times
        .iter()
        .map(|&t| {
            if t <= t_a {
                Split::Train
            } else if t <= t_b {
                Split::Val
            } else {
                Split::Test
            }
        })
        .collect();
    for split in [Split::Train, Split::Val, Split::Test] {
        if !tags.contains(&split) {
            return Err(Error::EmptySplit(split.name()));
        }
    }
    series.splits = Some(tags);
    Ok(series)
}

/// Two-class points for the classification path.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationSet {
    pub points: Vec<[f64; 2]>,
    pub labels: Vec<usize>,
}

impl ClassificationSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// `n / 2` points near radius 1 (label 0) and `n / 2` near radius 2
/// (label 1), alternating, with Gaussian radial noise of std `noise`.
pub fn gen_two_circles(n: usize, seed: u64, noise: f64) -> Result<ClassificationSet> {
    if !n.is_multiple_of(2) || n == 0 {
        return Err(Error::InvalidConfig(format!("two circles needs an even n, got {n}")));
    }
    let normal = Normal::new(0.0, noise.max(0.0))
        .map_err(|e| Error::InvalidConfig(format!("noise {noise}: {e}")))?;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2;
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let r = (1.0 + label as f64) + if noise > 0.0 { normal.sample(&mut rng) } else { 0.0 };
        points.push([r * angle.cos(), r * angle.sin()]);
        labels.push(label);
    }
    Ok(ClassificationSet { points, labels })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logistic_starts_at_history_and_rises() {
        let s = gen_delay_logistic(1.4, 5.0, 51).unwrap();
        assert_eq!(s.values[0], vec![0.1]);
        assert!(s.values[1][0] > s.values[0][0]);
        assert!(s.values[2][0] > s.values[1][0]);
    }

    #[test]
    fn toy_split_sizes() {
        let s = gen_toy_linear_dde(1000).unwrap();
        assert_eq!(s.counts(), (600, 200, 200));
        assert_eq!(s.values[0], TOY_HISTORY.to_vec());
        assert_eq!(s.times[999], 10.0);
    }

    #[test]
    fn toy_rhs_initial_slope() {
        let mut out = [0.0; 2];
        toy_rhs(0.0, &TOY_HISTORY, &TOY_HISTORY, &mut out);
        assert!((out[0] + 0.225).abs() < 1e-15);
        assert!((out[1] + 0.0875).abs() < 1e-15);
    }

    #[test]
    fn split_errors() {
        let mk = |n| LabeledSeries {
            times: uniform_times(10.0, n),
            values: vec![vec![0.0]; n],
            splits: None,
        };
        assert_eq!(split_series(mk(1000), (6.0, 8.0)).unwrap().counts(), (600, 200, 200));
        assert_eq!(split_series(mk(10), (9.99, 9.995)), Err(Error::EmptySplit("val")));
        // all samples at or before t_a leave nothing for validation or test
        let s = LabeledSeries {
            times: vec![0.0, 1.0, 2.0, 10.0],
            values: vec![vec![0.0]; 4],
            splits: None,
        };
        assert_eq!(split_series(s, (2.5, 3.0)), Err(Error::EmptySplit("val")));
        assert!(split_series(mk(10), (8.0, 6.0)).is_err());
    }

    #[test]
    fn circles_deterministic_and_noise_free_radii() {
        let a = gen_two_circles(50, 7, 0.1).unwrap();
        assert_eq!(a, gen_two_circles(50, 7, 0.1).unwrap());
        let clean = gen_two_circles(50, 7, 0.0).unwrap();
        for (p, &l) in clean.points.iter().zip(&clean.labels) {
            let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
            assert!((r - (1.0 + l as f64)).abs() < 1e-12);
        }
        assert_eq!(clean.labels.iter().filter(|&&l| l == 0).count(), 25);
        assert!(gen_two_circles(7, 0, 0.1).is_err());
    }

    #[test]
    fn circles_separable_by_radius() {
        let set = gen_two_circles(400, 0, 0.1).unwrap();
        let correct = set
            .points
            .iter()
            .zip(&set.labels)
            .filter(|(p, &l)| ((p[0].hypot(p[1]) > 1.5) as usize) == l)
            .count();
        assert!(correct as f64 / 400.0 >= 0.99);
    }
}
