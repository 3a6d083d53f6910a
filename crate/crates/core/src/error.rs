use thiserror::Error;

/// Errors produced by mesh construction, nonlinearities and the solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),

    /// Newton iteration on an implicit step did not reach its tolerance.
    #[error("step {step} failed after {iterations} Newton iterations (residual {residual:e})")]
    StepFailure {
        step: usize,
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    /// A system that must be an M-matrix turned out singular.
    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid_arg<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}

pub(crate) fn invalid_config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidConfiguration(msg.into()))
}
