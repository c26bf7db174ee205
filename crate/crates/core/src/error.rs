use thiserror::Error;

pub type Result<T, E = GtfError> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GtfError {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite entry at index {index}")]
    NonFinite { index: usize },

    #[error("reference direction too small to project onto (norm {norm:e} <= {threshold:e})")]
    DegenerateReference { norm: f64, threshold: f64 },

    #[error("{what} out of range: {detail}")]
    OutOfRange { what: &'static str, detail: String },

    #[error("invalid range: {0}")]
    InvalidRange(String),

    #[error("invalid dimension: {0}")]
    InvalidDim(String),

    #[error("unknown condition {0}")]
    UnknownCondition(String),

    #[error("denoiser returned non-finite output at t={t}")]
    DenoiserFailure { t: usize },

    #[error("fused precision {precision} is not positive in coordinate {coord}")]
    IndefinitePrecision { coord: usize, precision: f64 },

    #[error("unsupported composition: {0}")]
    UnsupportedComposition(String),

    #[error("grid metrics require d = 2, got d = {0}")]
    DimensionUnsupported(usize),

    #[error("grid specs differ")]
    SpecMismatch,

    #[error("training data exhausted: {0}")]
    DataExhausted(String),

    #[error("training loss diverged at epoch {epoch}")]
    DivergedLoss { epoch: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config parse error at line {line}, column {column}: {message}")]
    ConfigParse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid value for `{key}`: {message}")]
    ConfigValidation { key: String, message: String },

    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

pub(crate) fn ensure_same_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(GtfError::DimensionMismatch { expected, found })
    }
}

impl GtfError {
    pub(crate) fn io(path: &std::path::Path, err: std::io::Error) -> Self {
        GtfError::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }
}
