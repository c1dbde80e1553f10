use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{what} has zero variance; correlation is undefined")]
    ZeroVariance { what: &'static str },

    #[error("intensities must lie in [0, 1]; found {value}")]
    IntensityRange { value: f64 },

    #[error("loss became non-finite at iteration {iteration}")]
    NonFinite { iteration: usize },

    /// The deformed image collapsed to a constant partway through a run.
    #[error("optimization diverged at iteration {iteration}: {what} has zero variance")]
    Diverged { iteration: usize, what: &'static str },

    #[error("could not generate a fold-free warp after {attempts} attempts; try a smaller max displacement")]
    WarpGeneration { attempts: usize },

    #[error("{path}: malformed file at byte {offset}: {reason}")]
    Format {
        path: String,
        offset: u64,
        reason: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub(crate) fn format(path: &std::path::Path, offset: u64, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.display().to_string(),
            offset,
            reason: reason.into(),
        }
    }
}
