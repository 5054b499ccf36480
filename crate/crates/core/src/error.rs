use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("matrix is not Hermitian (asymmetry {asymmetry:.3e} exceeds {tolerance:.3e})")]
    NotHermitian { asymmetry: f64, tolerance: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("negative population {value:.3e} in state {index}")]
    NegativePopulation { index: usize, value: f64 },

    #[error("kinetics are disconnected: stationary subspace has dimension {0}")]
    DisconnectedKinetics(usize),

    #[error("invalid sequence: {0}")]
    InvalidSequence(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("simulation of curve {curve} failed: {source}")]
    Curve {
        curve: String,
        #[source]
        source: Box<Error>,
    },

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
