use thiserror::Error;

/// Errors raised anywhere in the estimation and inference pipeline.
#[derive(Debug, Error)]
pub enum GlvmError {
    #[error("dimension mismatch on axis `{axis}`: expected {expected}, found {found}")]
    Dimension {
        axis: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("value {value} is outside the domain of family `{family}`")]
    Domain { family: String, value: f64 },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("degenerate partial information for item {item}, covariate {covariate} (F = {info:e})")]
    DegenerateInformation {
        item: usize,
        covariate: usize,
        info: f64,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl GlvmError {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            GlvmError::InvalidConfig(_) => 1,
            GlvmError::Numerical(_) | GlvmError::DegenerateInformation { .. } => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, GlvmError>;
