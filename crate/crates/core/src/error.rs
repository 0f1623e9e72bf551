use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix is not Hermitian positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("combination weights into agent {agent} sum to {sum} > 1")]
    WeightBudget { agent: usize, sum: f64 },

    #[error("graph is not strongly connected (agent {0} unreachable)")]
    Disconnected(usize),

    #[error("agent {0} has zero mean step-size")]
    ZeroMeanStep(usize),

    #[error("stability condition not met: {0}")]
    ConditionFailed(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("config field `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("invalid config:{}", format_field_errors(.0))]
    Validation(Vec<FieldError>),

    #[error("malformed csv `{file}` line {line}: {message}")]
    Csv {
        file: String,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One semantic problem in a config file, located by its field path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub path: String,
    pub message: String,
}

fn format_field_errors(errs: &[FieldError]) -> String {
    errs.iter()
        .map(|e| format!("\n  `{}`: {}", e.path, e.message))
        .collect()
}

impl Error {
    pub(crate) fn param(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
