use thiserror::Error;

/// Errors raised by the geometry, flow and adjoint kernels.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("metric not positive definite at node {node}: smallest eigenvalue {min_eigenvalue:e} below floor")]
    SingularMetric { node: usize, min_eigenvalue: f64 },
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("invalid grid: {0}")]
    BadGrid(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("Sobolev exponent p = {p} must exceed the dimension n = {n}")]
    BadExponent { p: f64, n: usize },
    #[error("test family is empty")]
    EmptyFamily,
    #[error("test function is not nonnegative (min {min:e})")]
    NegativeTestFunction { min: f64 },
    #[error("mollifier width {delta} must be positive and below 1/8")]
    KernelTooWide { delta: f64 },
    #[error("no kernel width down to 2dx reaches fairness 1 + {delta_target}: best {best}")]
    CannotAchieveFairness { delta_target: f64, best: f64 },
    #[error("collapse time reached: 1 - 2at/n = {factor} at t = {t}")]
    CollapseTime { t: f64, factor: f64 },
    #[error("flow blew up at t = {t}: {reason}")]
    BlowUp { t: f64, reason: String },
    #[error("unstable step at t = {t}: state norm grew by {ratio}x")]
    UnstableStep { t: f64, ratio: f64 },
    #[error("fairness {fairness} exceeds the gate 1 + {delta_fair}")]
    NotFair { fairness: f64, delta_fair: f64 },
    #[error("invalid parameter: {0}")]
    BadParameter(String),
    #[error("terminal time {0} is not a saved trace time")]
    TerminalTimeNotSaved(f64),
    #[error("unknown or invalid scenario: {0}")]
    BadScenario(String),
    #[error("bad field container: {0}")]
    BadContainer(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("stage {stage}: {source}")]
    Stage { stage: &'static str, source: Box<Error> },
}

impl Error {
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            Error::Stage { .. } => self,
            other => Error::Stage { stage, source: Box::new(other) },
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
