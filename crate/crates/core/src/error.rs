use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {context} at index {index}")]
    NonFinite { context: String, index: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("point {point:?} lies outside the periodic box")]
    OutsideBox { point: Vec<f64> },

    #[error("time {time} is at or beyond the caustic horizon {horizon}")]
    CausticCrossed { time: f64, horizon: f64 },

    #[error("ray-map inversion did not converge (worst residual {worst_residual:e})")]
    InversionFailed { worst_residual: f64 },

    #[error("integration produced a non-finite state at t = {time}")]
    Blowup { time: f64 },

    #[error("under-resolved at t = {time}: spectral tail fraction {tail:e} exceeds {tolerance:e}")]
    UnderResolved { time: f64, tail: f64, tolerance: f64 },

    #[error("time grid mismatch: {0}")]
    TimeGridMismatch(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
