use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("zero variance input")]
    ZeroVariance,

    #[error("infinite divergence: row {row}, column {col} has q = 0 where p > 0")]
    InfiniteDivergence { row: usize, col: usize },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("function evaluation failed: {0}")]
    EvaluationFailed(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("manifest mismatch on {field}: expected {expected}, found {found}")]
    ManifestMismatch {
        field: String,
        expected: String,
        found: String,
    },

    #[error("parse error in {file} at row {row}, column {col}: {message}")]
    Parse {
        file: String,
        row: usize,
        col: usize,
        message: String,
    },

    #[error("series too short: length {length} < window {window}")]
    SeriesTooShort { length: usize, window: usize },

    #[error("{rows} rows exceed the exact t-SNE cap of {cap}")]
    TooLargeForExact { rows: usize, cap: usize },

    #[error(
        "input has {dims} dimensions; MUTANT requires the input data to have no fewer than 8 dimensions"
    )]
    DimensionTooLow { dims: usize },

    #[error("training diverged: {0}")]
    TrainingDiverged(String),

    #[error("empty input")]
    EmptyInput,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }
}
