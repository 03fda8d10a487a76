use thiserror::Error;

/// Errors raised by every stage of a swing-option solve.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("stability error: kappa * sqrt(dt) = {ratio} must be < 1")]
    Stability { ratio: f64 },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("ordering error: target step {target} is after source step {source_step}")]
    Ordering { target: usize, source_step: usize },

    #[error("constraint error: {0}")]
    Constraint(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("capacity error: {0}")]
    Capacity(String),

    #[error("precondition error: {0}")]
    Precondition(String),

    #[error("coverage error: {0}")]
    Coverage(String),

    #[error("solver error: {message} (residual {residual:e})")]
    Solver { message: String, residual: f64 },

    #[error("configuration error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Config { line: Option<usize>, message: String },
}

impl Error {
    pub fn config(line: Option<usize>, message: impl Into<String>) -> Self {
        Error::Config { line, message: message.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
