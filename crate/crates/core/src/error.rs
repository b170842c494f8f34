use std::path::PathBuf;

/// Errors produced by the engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: expected {expected}, got {got}")]
    DimMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("kernel size must be odd and positive, got {0}")]
    InvalidKernel(usize),

    #[error("dilation must be at least 1, got {0}")]
    InvalidDilation(usize),

    #[error("invalid model config: {0}")]
    InvalidConfig(String),

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("unsupported version {found} (expected {expected})")]
    BadVersion { expected: u32, found: u32 },

    #[error("truncated input at byte offset {offset}: needed {needed} more bytes")]
    Truncated { offset: u64, needed: u64 },

    #[error("format error at byte offset {offset}: {what}")]
    Format { offset: u64, what: String },

    #[error("mask violation in layer {layer}: weight index {index} is masked but holds {value}")]
    MaskViolation { layer: usize, index: usize, value: f32 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("degenerate labels: {0}")]
    DegenerateLabels(&'static str),

    #[error("anomaly rectangle does not fit: {0}")]
    RectDoesNotFit(String),

    #[error("oracle undefined: {0}")]
    OracleUndefined(&'static str),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dims(op: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::DimMismatch {
            op,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input (config, files) rather than
    /// internal verification failures.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::MaskViolation { .. } | Error::NonFinite(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
