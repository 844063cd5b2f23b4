use std::path::PathBuf;

/// Errors produced anywhere in the indicator pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing directory: {0}")]
    MissingDirectory(PathBuf),

    #[error("no record files in directory: {0}")]
    EmptyDirectory(PathBuf),

    #[error("inconsistent record length in {file}: expected {expected} rows, found {found}")]
    InconsistentRecordLength {
        file: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("parse error in {context} line {line}: {message}")]
    Parse {
        context: String,
        line: usize,
        message: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("empty series")]
    EmptySeries,

    #[error("window too short: {len} samples (need at least {min})")]
    WindowTooShort { len: usize, min: usize },

    #[error("zero-variance window: kurtosis and skewness are undefined")]
    ZeroVariance,

    #[error("zero rms: peak-to-rms ratio is undefined")]
    ZeroRms,

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("record {index}: {source}")]
    Record {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("too few rows: {rows} (need at least {min})")]
    TooFewRows { rows: usize, min: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("segment of length {len} is too short (need at least {min})")]
    SegmentTooShort { len: usize, min: usize },

    #[error("covariance is numerically singular (condition number {condition:e})")]
    SingularCovariance { condition: f64 },

    #[error("zero diagonal entry in covariance at index {0}")]
    ZeroDiagonal(usize),

    #[error("parameter ordering violated: {0}")]
    ParameterOrder(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("constant input: rank correlation is undefined")]
    ConstantInput,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_record(self, index: usize) -> Self {
        Error::Record {
            index,
            source: Box::new(self),
        }
    }
}
