use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("degenerate signal: {0}")]
    DegenerateSignal(String),
    #[error("unsupported FFT length {0}: must be a power of two and at least 2")]
    UnsupportedLength(usize),
    #[error("shape error in {op}: {msg}")]
    Shape { op: &'static str, msg: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("missing data file {0}")]
    MissingFile(PathBuf),
    #[error("data file {path} has {available} bytes after offset {offset}, entry needs {needed}")]
    ShortFile {
        path: PathBuf,
        offset: u64,
        needed: u64,
        available: u64,
    },
    #[error("label gap: class index {0} has no entries")]
    LabelGap(usize),
    #[error("class {class} has {count} segments, fewer than the {needed} non-empty split parts")]
    TooFewSegments {
        class: usize,
        count: usize,
        needed: usize,
    },
    #[error("split `{0}` is empty")]
    EmptySplit(String),
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse error classes, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Data,
    Numeric,
}

impl Error {
    pub fn shape(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Shape {
            op,
            msg: msg.into(),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::MissingFile(_)
            | Error::ShortFile { .. }
            | Error::LabelGap(_)
            | Error::TooFewSegments { .. }
            | Error::EmptySplit(_)
            | Error::Format(_)
            | Error::Io(_)
            | Error::EmptyInput(_)
            | Error::DegenerateSignal(_) => ErrorKind::Data,
            Error::Diverged { .. } | Error::NonScalarLoss(_) => ErrorKind::Numeric,
            Error::UnsupportedLength(_)
            | Error::Shape { .. }
            | Error::InvalidArgument(_)
            | Error::Config(_)
            | Error::LabelOutOfRange { .. }
            | Error::Json(_) => ErrorKind::Validation,
        }
    }
}
