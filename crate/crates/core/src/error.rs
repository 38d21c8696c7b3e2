//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Evaluation past the largest argument a gain is defined for.
    /// Signals that the caller must enlarge the table, not that the
    /// property failed.
    #[error("argument {arg} exceeds the domain cap {cap} of {what}")]
    DomainExceeded { what: String, arg: f64, cap: f64 },

    #[error("value {value} is outside the range of {what}")]
    OutOfRange { what: String, value: f64 },

    #[error("negative argument {0} passed to a nonnegative-domain function")]
    NegativeArgument(f64),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid gain: {0}")]
    InvalidGain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("disturbance value {value:?} lies outside the disturbance set")]
    DisturbanceOutsideSet { value: Vec<f64> },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("envelope does not fall below {epsilon} within the declared horizon {horizon}")]
    NoDecayWithinHorizon { epsilon: f64, horizon: f64 },

    #[error("gain is not a contraction on the data range: value at {r} is {value} >= {r}")]
    NotContraction { r: f64, value: f64 },

    #[error("decrease precondition fails at t = {time}: {detail}")]
    PreconditionFailed { time: f64, detail: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("numeric overflow in {0}")]
    Overflow(&'static str),

    #[error("csv parse error at line {line}: {detail}")]
    CsvParse { line: usize, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
