//! Error types, one enum per layer of the crate.

use thiserror::Error;

/// Failures of the quantization routines.
///
/// The `Display` form always starts with the kind name and, for shape
/// problems, the offending dimensions, e.g. `ShapeMismatch(256,100,32)`.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuantError {
    #[error(
        "ShapeMismatch({rows},{cols},{group_size}): last dimension {cols} is not divisible by group size {group_size}"
    )]
    ShapeMismatch { rows: usize, cols: usize, group_size: usize },
    #[error("NonFinite: value at ({row},{col}) is not finite")]
    NonFinite { row: usize, col: usize },
    #[error("EmptyCalibration: {0}")]
    EmptyCalibration(String),
    #[error("SingularHessian: Cholesky factorization of the {dim}x{dim} Hessian failed at pivot {pivot}")]
    SingularHessian { dim: usize, pivot: usize },
    #[error("DimMismatch: {context}: expected {expected:?}, found {found:?}")]
    DimMismatch { context: String, expected: (usize, usize), found: (usize, usize) },
    #[error("CodeOutOfRange: {0} is outside the signed 4-bit range [-8, 7]")]
    CodeOutOfRange(i32),
    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),
}

impl QuantError {
    /// Stable kind name, used by the CLI and in reports.
    pub fn kind(&self) -> &'static str {
        match self {
            QuantError::ShapeMismatch { .. } => "ShapeMismatch",
            QuantError::NonFinite { .. } => "NonFinite",
            QuantError::EmptyCalibration(_) => "EmptyCalibration",
            QuantError::SingularHessian { .. } => "SingularHessian",
            QuantError::DimMismatch { .. } => "DimMismatch",
            QuantError::CodeOutOfRange(_) => "CodeOutOfRange",
            QuantError::InvalidConfig(_) => "InvalidConfig",
        }
    }

    pub(crate) fn dims(context: impl Into<String>, expected: (usize, usize), found: (usize, usize)) -> Self {
        QuantError::DimMismatch { context: context.into(), expected, found }
    }
}

/// Failures reading or writing tensor container files.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic tag: not a tensor container")]
    BadMagic,
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated input while reading {0}")]
    Truncated(&'static str),
    #[error("{0} trailing bytes after the last entry")]
    TrailingBytes(usize),
    #[error("duplicate entry name `{0}`")]
    DuplicateName(String),
    #[error("a tensor file needs at least one entry")]
    NoEntries,
    #[error("entry name is not valid UTF-8")]
    InvalidName,
    #[error("unknown dtype tag {0}")]
    UnknownDtype(u8),
    #[error("entry `{name}`: {reason}")]
    InvalidPayload { name: String, reason: String },
    #[error("entry `{name}`: {source}")]
    Quant {
        name: String,
        #[source]
        source: QuantError,
    },
}

/// Failures of the toy model: construction, weight loading, evaluation.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("empty corpus: {0}")]
    EmptyCorpus(&'static str),
    #[error("symbol {symbol:?} at offset {offset} is not in the model alphabet")]
    UnknownSymbol { symbol: char, offset: usize },
    #[error("token id {0} is outside the vocabulary")]
    TokenOutOfRange(u32),
    #[error("sequence length {requested} exceeds the maximum of {max}")]
    LengthOverflow { requested: usize, max: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("missing parameter `{0}`")]
    MissingParameter(String),
    #[error("parameter `{name}`: {reason}")]
    BadParameter { name: String, reason: String },
    #[error("missing calibration set for layer `{0}`")]
    MissingCalibration(String),
    #[error("layer `{layer}`: {source}")]
    Layer {
        layer: String,
        #[source]
        source: QuantError,
    },
    #[error(transparent)]
    Quant(#[from] QuantError),
    #[error(transparent)]
    Format(#[from] FormatError),
}

impl ModelError {
    pub(crate) fn layer(layer: impl Into<String>) -> impl FnOnce(QuantError) -> ModelError {
        let layer = layer.into();
        move |source| ModelError::Layer { layer, source }
    }
}

/// Failures of the benchmark harness.
#[derive(Debug, Error)]
pub enum BenchError {
    #[error("at least {min} timed runs are required, got {got}")]
    TooFewRuns { min: usize, got: usize },
    #[error("no prompts given")]
    NoPrompts,
    #[error("timed region had zero elapsed time")]
    ZeroElapsed,
    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),
    #[error("report decode failed: {0}")]
    Report(#[from] serde_json::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
}
