use thiserror::Error;

/// Errors produced by the identification toolkit.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("simulation diverged: non-finite value at sample {index}")]
    DivergedSimulation { index: usize },

    #[error("insufficient data: need more than {order} samples, got {n}")]
    InsufficientData { n: usize, order: usize },

    #[error("weighting matrix is not symmetric positive definite")]
    NotPositiveDefinite,

    #[error("reference output channel {channel} is constant; best-fit rate is undefined")]
    DegenerateReference { channel: usize },

    #[error("rank breakdown in QR factorization at column {column}")]
    RankBreakdown { column: usize },

    #[error("rank-deficient regressor: column {column} is numerically dependent")]
    RankDeficientRegressor { column: usize },

    #[error("solver produced a non-finite step; try a smaller step size")]
    NonFiniteStep,

    #[error("model residual is not affine in the parameters (checked at column {column})")]
    NotLinearInParams { column: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("maglev position crossed zero at sample {index}; the plant model is singular there")]
    PositionSingularity { index: usize },

    #[error("csv error: {0}")]
    Csv(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
