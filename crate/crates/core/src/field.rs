//! The neural right-hand side `f(t, z(t), z(t - tau); theta)`.
//!
//! `f` is a two-layer MLP `W2 * act(W1 * u + b1) + b2` applied to a combined
//! input `u = h(z, v)`:
//!
//! * `Concat`: `u = [z, v]` (current state first), input width `2d`;
//! * `Convex`: `u = lambda * z + (1 - lambda) * v`, input width `d`.
//!
//! With `include_time` the scalar `t` is appended to `u`. The output always
//! has width `d`.
//!
//! Parameters live in one flat vector laid out as `W1` (row-major,
//! `hidden x input`), `b1`, `W2` (row-major, `d x hidden`), `b2`.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solver::{check_dim, DelayRhs};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combine {
    Concat,
    Convex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    /// Linear hidden layer. Only useful for checking gradients by hand.
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activated value.
    #[inline]
    fn slope(self, activated: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - activated * activated,
            Activation::Identity => 1.0,
        }
    }
}

fn default_lambda() -> f64 {
    1.0
}

/// Architecture of a delay field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayFieldSpec {
    pub state_dim: usize,
    pub hidden_dim: usize,
    pub combine: Combine,
    /// Weight of the current state; only used by `Convex`.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    pub tau: f64,
    #[serde(default)]
    pub include_time: bool,
    #[serde(default)]
    pub activation: Activation,
}

/// Offsets of each tensor inside a [`ParamVec`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub w1: Range<usize>,
    pub b1: Range<usize>,
    pub w2: Range<usize>,
    pub b2: Range<usize>,
}

impl DelayFieldSpec {
    pub fn convex(state_dim: usize, hidden_dim: usize, lambda: f64, tau: f64) -> Self {
        Self {
            state_dim,
            hidden_dim,
            combine: Combine::Convex,
            lambda,
            tau,
            include_time: false,
            activation: Activation::Tanh,
        }
    }

    pub fn concat(state_dim: usize, hidden_dim: usize, tau: f64) -> Self {
        Self {
            state_dim,
            hidden_dim,
            combine: Combine::Concat,
            lambda: 1.0,
            tau,
            include_time: false,
            activation: Activation::Tanh,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.state_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::InvalidConfig(
                "state_dim and hidden_dim must be positive".into(),
            ));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidConfig(format!("tau = {} must be > 0", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidConfig(format!(
                "lambda = {} must lie in [0, 1]",
                self.lambda
            )));
        }
        Ok(())
    }

    /// Width of `h(z, v)` without the optional time column.
    pub fn combined_width(&self) -> usize {
        match self.combine {
            Combine::Concat => 2 * self.state_dim,
            Combine::Convex => self.state_dim,
        }
    }

    pub fn input_width(&self) -> usize {
        self.combined_width() + usize::from(self.include_time)
    }

    pub fn param_count(&self) -> usize {
        let (n, h, d) = (self.input_width(), self.hidden_dim, self.state_dim);
        h * n + h + d * h + d
    }

    pub fn layout(&self) -> ParamLayout {
        let (n, h, d) = (self.input_width(), self.hidden_dim, self.state_dim);
        let w1 = 0..h * n;
        let b1 = w1.end..w1.end + h;
        let w2 = b1.end..b1.end + d * h;
        let b2 = w2.end..w2.end + d;
        ParamLayout { w1, b1, w2, b2 }
    }

    /// `h(z, v)`.
    pub fn combine(&self, z: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.state_dim, z.len())?;
        check_dim(self.state_dim, v.len())?;
        Ok(match self.combine {
            Combine::Concat => z.iter().chain(v).copied().collect(),
            Combine::Convex => {
                let lam = self.lambda;
                z.iter().zip(v).map(|(a, b)| lam * a + (1.0 - lam) * b).collect()
            }
        })
    }
}

/// Unpacked MLP tensors, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpWeights {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Flat parameter vector of a delay field.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVec(pub Vec<f64>);

impl ParamVec {
    pub fn zeros(spec: &DelayFieldSpec) -> Self {
        ParamVec(vec![0.0; spec.param_count()])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn pack(spec: &DelayFieldSpec, w: &MlpWeights) -> Result<Self> {
        let layout = spec.layout();
        for (range, part) in [
            (&layout.w1, &w.w1),
            (&layout.b1, &w.b1),
            (&layout.w2, &w.w2),
            (&layout.b2, &w.b2),
        ] {
            check_dim(range.len(), part.len())?;
        }
        let mut theta = Vec::with_capacity(spec.param_count());
        theta.extend_from_slice(&w.w1);
        theta.extend_from_slice(&w.b1);
        theta.extend_from_slice(&w.w2);
        theta.extend_from_slice(&w.b2);
        Ok(ParamVec(theta))
    }

    pub fn unpack(&self, spec: &DelayFieldSpec) -> Result<MlpWeights> {
        check_dim(spec.param_count(), self.0.len())?;
        let l = spec.layout();
        Ok(MlpWeights {
            w1: self.0[l.w1].to_vec(),
            b1: self.0[l.b1].to_vec(),
            w2: self.0[l.w2].to_vec(),
            b2: self.0[l.b2].to_vec(),
        })
    }
}

/// Glorot-uniform weights, zero biases.
///
/// Weights are drawn layer by layer (`W1` then `W2`) from a
/// xoshiro256++ stream seeded through SplitMix64 (`seed_from_u64`).
pub fn init_params(spec: &DelayFieldSpec, seed: u64) -> ParamVec {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let (n, h, d) = (spec.input_width(), spec.hidden_dim, spec.state_dim);
    let mut theta = vec![0.0; spec.param_count()];
    let l = spec.layout();
    let s1 = (6.0 / (n + h) as f64).sqrt();
    for w in &mut theta[l.w1] {
        *w = rng.random_range(-s1..s1);
    }
    let s2 = (6.0 / (h + d) as f64).sqrt();
    for w in &mut theta[l.w2] {
        *w = rng.random_range(-s2..s2);
    }
    ParamVec(theta)
}

/// Activation record of one forward evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldCache {
    /// Network input, including the time column if present.
    pub u: Vec<f64>,
    /// Hidden activations `act(W1 u + b1)`.
    pub hidden: Vec<f64>,
    fingerprint: u64,
}

impl FieldCache {
    pub fn new(spec: &DelayFieldSpec) -> Self {
        Self {
            u: vec![0.0; spec.input_width()],
            hidden: vec![0.0; spec.hidden_dim],
            fingerprint: 0,
        }
    }
}

/// `(a^T df/dz, a^T df/dv, a^T df/dtheta)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VjpTriple {
    pub wrt_z: Vec<f64>,
    pub wrt_v: Vec<f64>,
    pub wrt_theta: Vec<f64>,
}

/// A delay field bound to fixed parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayField {
    spec: DelayFieldSpec,
    theta: ParamVec,
    fingerprint: u64,
}

fn fingerprint(theta: &[f64]) -> u64 {
    // FNV-1a over the raw bits
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for x in theta {
        for b in x.to_bits().to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h | 1
}

impl DelayField {
    pub fn new(spec: DelayFieldSpec, theta: ParamVec) -> Result<Self> {
        spec.validate()?;
        check_dim(spec.param_count(), theta.len())?;
        if !theta.0.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidConfig("non-finite parameter".into()));
        }
        let fingerprint = fingerprint(&theta.0);
        Ok(Self {
            spec,
            theta,
            fingerprint,
        })
    }

    pub fn spec(&self) -> &DelayFieldSpec {
        &self.spec
    }

    pub fn theta(&self) -> &ParamVec {
        &self.theta
    }

    pub fn into_theta(self) -> ParamVec {
        self.theta
    }

    fn fill_input(&self, t: f64, z: &[f64], v: &[f64], u: &mut [f64]) {
        let d = self.spec.state_dim;
        match self.spec.combine {
            Combine::Concat => {
                u[..d].copy_from_slice(z);
                u[d..2 * d].copy_from_slice(v);
            }
            Combine::Convex => {
                let lam = self.spec.lambda;
                for ((o, a), b) in u.iter_mut().zip(z).zip(v) {
                    *o = lam * a + (1.0 - lam) * b;
                }
            }
        }
        if self.spec.include_time {
            u[self.spec.combined_width()] = t;
        }
    }

    /// Forward pass into a reusable cache. Inputs are assumed to have the
    /// right dimensions.
    pub(crate) fn forward_into(&self, t: f64, z: &[f64], v: &[f64], cache: &mut FieldCache, out: &mut [f64]) {
        let n = self.spec.input_width();
        let l = self.spec.layout();
        let theta = &self.theta.0;
        self.fill_input(t, z, v, &mut cache.u);
        let w1 = &theta[l.w1];
        let b1 = &theta[l.b1];
        let act = self.spec.activation;
        for (j, hj) in cache.hidden.iter_mut().enumerate() {
            let row = &w1[j * n..(j + 1) * n];
            let pre = b1[j] + row.iter().zip(&cache.u).map(|(w, x)| w * x).sum::<f64>();
            *hj = act.apply(pre);
        }
        let w2 = &theta[l.w2];
        let h = self.spec.hidden_dim;
        for (i, (o, b)) in out.iter_mut().zip(&theta[l.b2]).enumerate() {
            let row = &w2[i * h..(i + 1) * h];
            *o = b + row.iter().zip(&cache.hidden).map(|(w, x)| w * x).sum::<f64>();
        }
        cache.fingerprint = self.fingerprint;
    }

    /// Reverse accumulation through the cached evaluation.
    ///
    /// `gu` receives `a^T df/du` (scratch, input width). When `theta_acc` is
    /// given, `scale * a^T df/dtheta` is added into it.
    pub(crate) fn backward_into(
        &self,
        cache: &FieldCache,
        a: &[f64],
        gu: &mut [f64],
        gh: &mut [f64],
        theta_acc: Option<(&mut [f64], f64)>,
    ) {
        let n = self.spec.input_width();
        let h = self.spec.hidden_dim;
        let l = self.spec.layout();
        let theta = &self.theta.0;
        let w2 = &theta[l.w2.clone()];
        let act = self.spec.activation;
        // gradient at the hidden pre-activations
        for (j, g) in gh.iter_mut().enumerate() {
            let back: f64 = a.iter().enumerate().map(|(i, ai)| ai * w2[i * h + j]).sum();
            *g = back * act.slope(cache.hidden[j]);
        }
        let w1 = &theta[l.w1.clone()];
        gu.fill(0.0);
        for (j, g) in gh.iter().enumerate() {
            let row = &w1[j * n..(j + 1) * n];
            for (o, w) in gu.iter_mut().zip(row) {
                *o += g * w;
            }
        }
        if let Some((acc, scale)) = theta_acc {
            let gw1 = &mut acc[l.w1.clone()];
            for (j, g) in gh.iter().enumerate() {
                let sg = scale * g;
                for (o, x) in gw1[j * n..(j + 1) * n].iter_mut().zip(&cache.u) {
                    *o += sg * x;
                }
            }
            for (o, g) in acc[l.b1.clone()].iter_mut().zip(gh.iter()) {
                *o += scale * g;
            }
            let gw2 = &mut acc[l.w2.clone()];
            for (i, ai) in a.iter().enumerate() {
                let sa = scale * ai;
                for (o, x) in gw2[i * h..(i + 1) * h].iter_mut().zip(&cache.hidden) {
                    *o += sa * x;
                }
            }
            for (o, ai) in acc[l.b2.clone()].iter_mut().zip(a) {
                *o += scale * ai;
            }
        }
    }

    /// Splits `a^T df/du` into the `z` and `v` parts and adds them, scaled,
    /// into `gz` / `gv`. The time column feeds neither.
    pub(crate) fn split_input_grad(&self, gu: &[f64], scale: f64, gz: Option<&mut [f64]>, gv: Option<&mut [f64]>) {
        let d = self.spec.state_dim;
        match self.spec.combine {
            Combine::Concat => {
                if let Some(gz) = gz {
                    for (o, g) in gz.iter_mut().zip(&gu[..d]) {
                        *o += scale * g;
                    }
                }
                if let Some(gv) = gv {
                    for (o, g) in gv.iter_mut().zip(&gu[d..2 * d]) {
                        *o += scale * g;
                    }
                }
            }
            Combine::Convex => {
                let lam = self.spec.lambda;
                if let Some(gz) = gz {
                    for (o, g) in gz.iter_mut().zip(&gu[..d]) {
                        *o += scale * lam * g;
                    }
                }
                if let Some(gv) = gv {
                    for (o, g) in gv.iter_mut().zip(&gu[..d]) {
                        *o += scale * (1.0 - lam) * g;
                    }
                }
            }
        }
    }

    /// Evaluates `f(t, z, v)` and returns the activation record for [`Self::vjp`].
    pub fn eval(&self, t: f64, z: &[f64], v: &[f64]) -> Result<(Vec<f64>, FieldCache)> {
        check_dim(self.spec.state_dim, z.len())?;
        check_dim(self.spec.state_dim, v.len())?;
        let mut cache = FieldCache::new(&self.spec);
        let mut out = vec![0.0; self.spec.state_dim];
        self.forward_into(t, z, v, &mut cache, &mut out);
        if !out.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFiniteOutput(t));
        }
        Ok((out, cache))
    }

    pub fn vjp(&self, cache: &FieldCache, a: &[f64]) -> Result<VjpTriple> {
        if cache.fingerprint != self.fingerprint {
            return Err(Error::StaleCache);
        }
        let d = self.spec.state_dim;
        check_dim(d, a.len())?;
        let mut gu = vec![0.0; self.spec.input_width()];
        let mut gh = vec![0.0; self.spec.hidden_dim];
        let mut wrt_theta = vec![0.0; self.spec.param_count()];
        self.backward_into(cache, a, &mut gu, &mut gh, Some((&mut wrt_theta, 1.0)));
        let mut wrt_z = vec![0.0; d];
        let mut wrt_v = vec![0.0; d];
        self.split_input_grad(&gu, 1.0, Some(&mut wrt_z), Some(&mut wrt_v));
        Ok(VjpTriple {
            wrt_z,
            wrt_v,
            wrt_theta,
        })
    }
}

impl DelayRhs for DelayField {
    fn dim(&self) -> usize {
        self.spec.state_dim
    }

    fn tau(&self) -> f64 {
        self.spec.tau
    }

    fn eval(&self, t: f64, z: &[f64], v: &[f64], out: &mut [f64]) {
        // scratch-free forward: the hidden layer is folded straight into `out`
        let n = self.spec.input_width();
        let d = self.spec.state_dim;
        let h = self.spec.hidden_dim;
        let l = self.spec.layout();
        let theta = &self.theta.0;
        let (w1, b1, w2) = (&theta[l.w1], &theta[l.b1], &theta[l.w2]);
        out.copy_from_slice(&theta[l.b2]);
        let lam = self.spec.lambda;
        let act = self.spec.activation;
        for j in 0..h {
            let row = &w1[j * n..(j + 1) * n];
            let mut pre = b1[j];
            match self.spec.combine {
                Combine::Concat => {
                    for k in 0..d {
                        pre += row[k] * z[k] + row[d + k] * v[k];
                    }
                }
                Combine::Convex => {
                    for k in 0..d {
                        pre += row[k] * (lam * z[k] + (1.0 - lam) * v[k]);
                    }
                }
            }
            if self.spec.include_time {
                pre += row[n - 1] * t;
            }
            let a = act.apply(pre);
            for (i, o) in out.iter_mut().enumerate() {
                *o += w2[i * h + j] * a;
            }
        }
    }
}
