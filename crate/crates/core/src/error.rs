use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("kernel matrix is not positive definite (smallest pivot {pivot:e})")]
    SingularKernel { pivot: f64 },

    #[error("linear system is not positive definite: {0}")]
    SingularSystem(String),

    #[error("non-finite value {value} at {location}")]
    NonFinite { location: String, value: f64 },

    #[error("intensity {intensity:e} at event {index} (t = {time}) is not positive")]
    NonPositiveIntensity { index: usize, time: f64, intensity: f64 },

    #[error("empty sample")]
    EmptySample,

    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },

    #[error("malformed {what}: {detail}")]
    Format { what: String, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
