use alloc::string::String;

/// Errors raised by the core library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),
    /// Two operands disagree in shape or length.
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// A stored value breaks a type invariant; carries the offending record.
    #[error("invariant violated in {context}: {detail}")]
    Invariant { context: String, detail: String },
    /// Artifacts built for different inventories or dimensions.
    #[error("incompatible artifact: {0}")]
    Incompatible(String),
    /// Not enough data to compute an estimate.
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("empty input: {0}")]
    Empty(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

macro_rules! contract {
    ($($arg:tt)*) => {
        $crate::Error::Contract(alloc::format!($($arg)*))
    };
}

macro_rules! shape_err {
    ($($arg:tt)*) => {
        $crate::Error::Shape(alloc::format!($($arg)*))
    };
}

pub(crate) use contract;
pub(crate) use shape_err;
