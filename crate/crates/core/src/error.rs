use thiserror::Error;

/// Errors produced by the solver, the neural field, the adjoint pass and the trainer.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("query at t = {t} lies beyond the last knot at {last}")]
    QueryBeyondTrajectory { t: f64, last: f64 },

    #[error("step size {h} exceeds the delay {tau}")]
    StepExceedsDelay { h: f64, tau: f64 },

    #[error("exceeded the maximum number of steps ({0})")]
    MaxStepsExceeded(usize),

    #[error("step size underflow at t = {t}: h = {h} cannot satisfy the tolerance")]
    StepUnderflow { t: f64, h: f64 },

    #[error("non-finite state at t = {0}")]
    NonFiniteState(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite network output at t = {0}")]
    NonFiniteOutput(f64),

    #[error("activation cache was produced by different parameters")]
    StaleCache,

    #[error("observation time {0} is not a knot of the forward trajectory")]
    ObservationNotOnKnot(f64),

    #[error("non-finite parameter gradient")]
    NonFiniteGradient,

    #[error("split `{0}` received no samples")]
    EmptySplit(&'static str),

    #[error("prediction time {pred} does not match target time {target}")]
    TimeMismatch { pred: f64, target: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;
