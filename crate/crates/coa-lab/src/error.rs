use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoaError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{field}: {message}")]
    Config { field: String, message: String },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("positivity violated for unit {unit} at exposure {level}")]
    Positivity { unit: usize, level: f64 },

    #[error("unachievable exposure {level} for unit {unit}")]
    EmptyCell { unit: usize, level: f64 },

    #[error("exposure undefined for unit {0}")]
    UndefinedExposure(usize),

    #[error("no unit admits every requested exposure level")]
    NoEligibleUnits,

    #[error("enumeration cap exceeded: {what} needs {size}, cap is {cap}")]
    EnumerationCap {
        what: &'static str,
        size: usize,
        cap: usize,
    },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("{0}")]
    Undefined(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CoaError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        CoaError::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Positivity and enumeration failures, as opposed to bad input.
    pub fn is_design_failure(&self) -> bool {
        matches!(
            self,
            CoaError::Positivity { .. }
                | CoaError::EmptyCell { .. }
                | CoaError::EnumerationCap { .. }
                | CoaError::UndefinedExposure(_)
                | CoaError::NoEligibleUnits
        )
    }
}

pub type Result<T> = std::result::Result<T, CoaError>;
