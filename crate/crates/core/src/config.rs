//! Experiment configuration files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::DelayFieldSpec;
use crate::optim::AdamParams;
use crate::solver::{SolverConfig, StepMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Uniform samples of the toy 2-D delay system on `[0, 10]`.
    #[serde(rename = "toy_2d")]
    Toy2d {
        #[serde(default = "default_toy_n")]
        n: usize,
    },
    /// Two noisy concentric circles.
    TwoCircles {
        #[serde(default = "default_circles_n")]
        n: usize,
        #[serde(default = "default_noise")]
        noise: f64,
        #[serde(default)]
        seed: u64,
    },
}

fn default_toy_n() -> usize {
    1000
}

fn default_circles_n() -> usize {
    400
}

fn default_noise() -> f64 {
    0.1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeConfig {
    FixedStep(f64),
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    TrajectoryMse,
    CrossEntropy,
}

/// One experiment: dataset, architecture, optimiser and integration settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub field: DelayFieldSpec,
    #[serde(default)]
    pub tau_candidates: Vec<f64>,
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default)]
    pub adam: AdamParams,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default = "default_mode")]
    pub mode: ModeConfig,
    #[serde(default = "default_loss")]
    pub loss: LossKind,
    /// Integration horizon of the classifier block.
    #[serde(default = "default_horizon")]
    pub horizon: f64,
}

fn default_lr() -> f64 {
    1e-3
}

fn default_mode() -> ModeConfig {
    ModeConfig::FixedStep(0.05)
}

fn default_loss() -> LossKind {
    LossKind::TrajectoryMse
}

fn default_horizon() -> f64 {
    1.0
}

impl RunConfig {
    pub fn step_mode(&self) -> StepMode {
        match self.mode {
            ModeConfig::FixedStep(h) => StepMode::Fixed { h },
            ModeConfig::Adaptive => StepMode::Adaptive(self.solver.clone()),
        }
    }

    pub fn with_tau(&self, tau: f64) -> Self {
        let mut cfg = self.clone();
        cfg.field.tau = tau;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        self.field.validate()?;
        self.solver.validate()?;
        if self.epochs < 1 {
            return bad("epochs must be >= 1".into());
        }
        if !(self.lr > 0.0) {
            return bad(format!("lr = {} must be > 0", self.lr));
        }
        if let Some(t) = self.tau_candidates.iter().find(|&&t| !(t > 0.0)) {
            return bad(format!("tau candidate {t} must be > 0"));
        }
        if let ModeConfig::FixedStep(h) = self.mode {
            if !(h > 0.0) {
                return bad(format!("fixed step {h} must be > 0"));
            }
        }
        match (&self.dataset, self.loss) {
            (DatasetConfig::Toy2d { n }, LossKind::TrajectoryMse) => {
                if *n < 10 {
                    return bad(format!("dataset.n = {n} must be >= 10"));
                }
                if self.field.state_dim != 2 {
                    return bad("the toy dataset is 2-dimensional; field.state_dim must be 2".into());
                }
            }
            (DatasetConfig::TwoCircles { n, .. }, LossKind::CrossEntropy) => {
                if *n == 0 || n % 2 != 0 {
                    return bad(format!("dataset.n = {n} must be even and positive"));
                }
                if self.field.state_dim < 2 {
                    return bad("field.state_dim must be >= 2 for 2-D inputs".into());
                }
                if !(self.horizon > 0.0) {
                    return bad(format!("horizon = {} must be > 0", self.horizon));
                }
            }
            _ => return bad("loss does not match dataset (toy_2d uses trajectory_mse, two_circles uses cross_entropy)".into()),
        }
        Ok(())
    }

    /// Parses and validates a JSON config. Parse errors name the offending
    /// field path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::InvalidConfig(format!("{path}: {}", e.into_inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}
