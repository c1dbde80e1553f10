use std::path::Path;

use thiserror::Error;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Numerical(String),

    #[error(transparent)]
    Core(#[from] warpforge::Error),

    #[error("{path}: {reason}")]
    Manifest { path: String, reason: String },
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn manifest(path: &Path, reason: impl Into<String>) -> Self {
        CliError::Manifest {
            path: path.display().to_string(),
            reason: reason.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        use warpforge::Error as E;
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Manifest { .. } => EXIT_IO,
            CliError::Numerical(_) => EXIT_NUMERICAL,
            CliError::Core(e) => match e {
                E::Config(_) | E::Shape { .. } | E::IntensityRange { .. } => EXIT_USAGE,
                E::Io { .. } | E::Format { .. } => EXIT_IO,
                E::NonFinite { .. }
                | E::Diverged { .. }
                | E::ZeroVariance { .. }
                | E::WarpGeneration { .. } => EXIT_NUMERICAL,
            },
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
