use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: cannot decode audio: {message}")]
    Audio { path: PathBuf, message: String },

    #[error("{path}: unsupported audio format: {message}")]
    UnsupportedFormat { path: PathBuf, message: String },

    #[error("{path}: zero-length audio")]
    EmptyAudio { path: PathBuf },

    #[error("{path}: empty manifest")]
    EmptyManifest { path: PathBuf },

    #[error("{path}: row {row}: {message}")]
    ManifestRow {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("clip of {len} samples is shorter than one frame ({frame} samples)")]
    ClipTooShort { len: usize, frame: usize },

    #[error("mel filter {index} has no support at this FFT resolution; reduce n_mels or raise n_fft")]
    DegenerateFilter { index: usize },

    #[error("shape mismatch at layer {layer}: {message}")]
    Shape { layer: usize, message: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("cannot sample pairs: {0}")]
    Sampling(String),

    #[error("dictionary is empty")]
    EmptyDictionary,

    #[error("invalid threshold {0}; expected a value in (0, 1)")]
    Threshold(f64),

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("protocol precondition violated: {0}")]
    Protocol(String),

    #[error("{failed} of {total} inputs failed")]
    Batch { failed: usize, total: usize },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Usage/config errors map to exit code 2, everything else to 1.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::EmptyManifest { .. }
                | Error::ManifestRow { .. }
                | Error::Threshold(_)
                | Error::Protocol(_)
        )
    }
}
