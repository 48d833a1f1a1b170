use thiserror::Error;

use crate::dynamics::DynamicsError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("orbit derivative undefined at index {0}")]
    UndefinedDerivative(usize),
    #[error("target leaves the image of the inverse branch at level {level}")]
    BranchEscape { level: usize },
    #[error("root bracketing lost precision at level {level}")]
    PrecisionLoss { level: usize },
    #[error("order {order} is not a zooming time ({reason})")]
    NotAZoomingTime { order: usize, reason: String },
    #[error("hypothesis failed: {0}")]
    HypothesisFail(String),
    #[error("cap exceeded: {0}")]
    CapExceeded(String),
    #[error("no return within {0} iterates")]
    NoReturn(usize),
    #[error("no convergence after {0} iterations")]
    NoConvergence(usize),
    #[error("distortion unbounded: {0}")]
    DistortionUnbounded(String),
    #[error("mean return time is not finite")]
    InfiniteMeanReturn,
    #[error("weights over discovered atoms sum to {0}, below 1 - 1e-3")]
    WeightMass(f64),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
