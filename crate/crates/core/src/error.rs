use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no IMU samples inside the integration window [{start}, {end})")]
    EmptyWindow { start: f64, end: f64 },

    #[error("timestamps are not strictly increasing at index {index}")]
    NonMonotonicTime { index: usize },

    #[error("normal matrix is singular or ill-conditioned (condition number {condition:e})")]
    SingularSystem { condition: f64 },

    #[error("degenerate point geometry: {0}")]
    DegenerateGeometry(String),

    #[error("attitude is ambiguous: top eigenvalues {largest} and {second} are not separated")]
    AmbiguousAttitude { largest: f64, second: f64 },

    #[error(
        "degenerate motion: second-smallest singular value {second_smallest:e} below threshold {threshold:e}"
    )]
    DegenerateMotion {
        second_smallest: f64,
        threshold: f64,
    },

    #[error("rate alignment did not converge after {iterations} iterations (last step {step_norm:e})")]
    NotConverged { iterations: usize, step_norm: f64 },

    #[error("angular rates do not excite all rotation axes")]
    InsufficientExcitation,

    #[error("accelerometer data is not static (magnitude std {std_dev:.3} m/s^2)")]
    NotStatic { std_dev: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: quaternion norm {norm} is not unit")]
    NonUnitQuaternion {
        path: PathBuf,
        line: usize,
        norm: f64,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
