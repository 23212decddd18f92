//! Error type shared by all modules.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside its documented domain.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// Two objects that must share a grid do not.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A control grid does not cover the requested extent.
    #[error("coverage error: {0}")]
    Coverage(String),

    /// A (category, stage, class) combination with no defined parameters.
    #[error("unsupported combination: {0}")]
    UnsupportedCombination(String),

    /// A mask is empty or otherwise unusable.
    #[error("mask error: {0}")]
    Mask(String),

    /// Caller passed non-finite or otherwise malformed input data.
    #[error("input error: {0}")]
    Input(String),

    /// A file could not be parsed; `offset` is the byte position of the problem.
    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: usize, msg: String },

    /// A plug-in (predictor) violated its contract.
    #[error("contract violation: {0}")]
    Contract(String),

    /// An operation that needs at least one element received none.
    #[error("empty set: {0}")]
    EmptySet(String),

    /// A type invariant would be violated (non-finite data, bad lengths).
    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable code, one per variant. The CLI prints this
    /// on the single error line so scripts can dispatch on it.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Parameter(_) => "E_PARAM",
            Error::Shape(_) => "E_SHAPE",
            Error::Coverage(_) => "E_COVERAGE",
            Error::UnsupportedCombination(_) => "E_UNSUPPORTED",
            Error::Mask(_) => "E_MASK",
            Error::Input(_) => "E_INPUT",
            Error::Parse { .. } => "E_PARSE",
            Error::Contract(_) => "E_CONTRACT",
            Error::EmptySet(_) => "E_EMPTY",
            Error::Invariant(_) => "E_INVARIANT",
            Error::Io(_) => "E_IO",
        }
    }
}

pub(crate) fn parameter(msg: impl Into<String>) -> Error {
    Error::Parameter(msg.into())
}

pub(crate) fn shape(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
