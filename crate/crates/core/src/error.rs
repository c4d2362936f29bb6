use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("event times not strictly increasing in component {component} at index {index}")]
    NonMonotoneTimes { component: usize, index: usize },

    #[error("event time outside [0, horizon] in component {component} at index {index}")]
    OutOfHorizon { component: usize, index: usize },

    #[error("event sequence must have at least one component")]
    EmptyDimension,

    #[error("lower bound exceeds upper bound at coordinate {0}")]
    InconsistentBounds(usize),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("power iteration did not converge within {0} iterations")]
    NoConvergence(usize),

    #[error("model is unstable: stability bound {rho} >= 1")]
    Unstable { rho: f64 },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("event cap {0} exceeded during simulation (near-critical model?)")]
    EventCapExceeded(usize),

    #[error("thinning bound violated at t = {t}: intensity {intensity} > bound {bound}")]
    DominationViolated { t: f64, intensity: f64, bound: f64 },

    #[error("non-positive intensity at event {index} of component {component}")]
    NonPositiveIntensityAtEvent { component: usize, index: usize },

    #[error("quadrature refinement disagreement {disagreement:e} exceeds tolerance {tolerance:e}")]
    QuadratureFailure { disagreement: f64, tolerance: f64 },

    #[error("every optimizer start failed with a non-positive intensity")]
    AllStartsFailed,

    #[error("observed information is singular on the inactive coordinates")]
    SingularInformation,

    #[error("constrained optimum exceeds unconstrained optimum by {0}; optimizer failure")]
    NestingViolation(f64),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("negative timestamp at line {0}")]
    NegativeTimestamp(usize),

    #[error("unknown code at line {line}: {code:?}")]
    UnknownCode { line: usize, code: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
