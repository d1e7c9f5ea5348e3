use thiserror::Error;

/// Errors raised anywhere in the training lab.
///
/// Each variant corresponds to one failure class; [`Error::name`] yields the
/// stable identifier the CLI prints in its machine-parsable error line.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("degenerate vector: {0}")]
    DegenerateVector(String),

    #[error("non-finite value: {0}")]
    Numeric(String),

    #[error("empty batch: {0}")]
    EmptyBatch(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("cannot deserialize: {0}")]
    Deserialize(String),

    #[error("embedding not unit-norm (norm = {norm})")]
    Normalization { norm: f64 },

    #[error("stale forward state: {0}")]
    State(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("schema violation: {0}")]
    Schema(String),

    #[error("cannot stratify: {0}")]
    Stratify(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged at step {step}: {message}")]
    Divergence { step: u64, message: String },

    #[error("unsupported format version: {0}")]
    Version(String),

    #[error("lookup failed: {0}")]
    Lookup(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable error-class name, e.g. `DimensionError`.
    pub fn name(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "DimensionError",
            Error::DegenerateVector(_) => "DegenerateVectorError",
            Error::Numeric(_) => "NumericError",
            Error::EmptyBatch(_) => "EmptyBatchError",
            Error::Range(_) => "RangeError",
            Error::Deserialize(_) => "DeserializeError",
            Error::Normalization { .. } => "NormalizationError",
            Error::State(_) => "StateError",
            Error::Parse { .. } => "ParseError",
            Error::Schema(_) => "SchemaError",
            Error::Stratify(_) => "StratifyError",
            Error::DegenerateInput(_) => "DegenerateInputError",
            Error::EmptyCorpus => "EmptyCorpusError",
            Error::Config(_) => "ConfigError",
            Error::Divergence { .. } => "DivergenceError",
            Error::Version(_) => "VersionError",
            Error::Lookup(_) => "LookupError",
            Error::Io(_) => "IoError",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
