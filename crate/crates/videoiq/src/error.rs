//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not conform to an op's arity rules.
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    /// Argument outside an op's domain (e.g. quantizer input out of [0,1]).
    #[error("invalid argument to {op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },

    /// Weight tensor whose normalization scale is zero.
    #[error("degenerate weight tensor: max |tanh(w)| is zero")]
    DegenerateWeights,

    /// Bit-width not in the configured candidate set.
    #[error("bit-width {bits} not in candidate set {set:?}")]
    BitWidthNotInSet { bits: u32, set: Vec<u32> },

    /// Malformed on-disk artifact (dataset, checkpoint, trace file).
    #[error("format error in {what}: {detail}")]
    Format { what: &'static str, detail: String },

    /// Bad key, value or missing entry in a config file or CLI flag.
    #[error("config error: {0}")]
    Config(String),

    /// Training diverged (NaN loss).
    #[error("training diverged: {0}")]
    Diverged(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch { op, detail: detail.into() }
    }

    pub fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format { what, detail: detail.into() }
    }
}
