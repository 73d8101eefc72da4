use thiserror::Error;

/// Errors raised by the models, solvers and the simulation harness.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("singular impedance: element denominator vanished")]
    SingularImpedance,

    #[error("singular reflection: element impedance equals -Z0")]
    SingularReflection,

    #[error("distance must be positive, got {0}")]
    NonPositiveDistance(f64),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("bracket error: g({lo}) = {g_lo} and g({hi}) = {g_hi} have the same sign")]
    Bracket { lo: f64, hi: f64, g_lo: f64, g_hi: f64 },

    #[error("fixed point did not converge after {iterations} iterations")]
    FixedPointDiverged { iterations: usize },

    #[error("zero channel")]
    ZeroChannel,

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("user {0} infeasible at current beamformers")]
    UserInfeasible(usize),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Config(e.to_string())
    }
}
