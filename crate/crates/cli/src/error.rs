use std::path::PathBuf;

use thiserror::Error;

/// Front-end errors, mapped onto process exit codes:
/// 1 validation, 2 I/O, 3 simulation invariant violation.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("validation failed:\n{}", issues.join("\n"))]
    Validation { issues: Vec<String> },

    #[error("parse error at {path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("simulation error: {0}")]
    Sim(#[from] skewsim::Error),
}

impl CliError {
    pub fn validation(issues: Vec<String>) -> Self {
        CliError::Validation { issues }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation { .. } | CliError::Parse { .. } => 1,
            CliError::Io { .. } => 2,
            // Configuration rejections from the simulator are validation
            // failures; anything else is a genuine simulation error.
            CliError::Sim(skewsim::Error::Config(_)) => 1,
            CliError::Sim(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
