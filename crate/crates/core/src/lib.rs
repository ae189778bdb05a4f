//! Delay differential neural networks.
//!
//! A constant-delay DDE solver with linear dense output, a two-layer MLP delay
//! field, adjoint gradients with checkpointed forward states, synthetic
//! datasets, and a small training and sweep harness.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod adjoint;
pub mod cli;
pub mod config;
pub mod datagen;
pub mod error;
pub mod field;
pub mod gradcheck;
pub mod io;
pub mod loss;
pub mod optim;
pub mod plot;
pub mod solver;
pub mod trainer;

pub use adjoint::{backward_pass, finite_diff_grad, GradResult, ObservationSet};
pub use config::RunConfig;
pub use error::{Error, Result};
pub use field::{init_params, Combine, DelayField, DelayFieldSpec, ParamVec};
pub use solver::{
    solve, solve_dde, solve_dde_fixed, solve_fixed_rk4, DelayRhs, FnRhs, History, SolverConfig, StepMode,
    Trajectory,
};
pub use trainer::{delay_sweep, train_classifier, train_trajectory, FitReport, SweepTable};
