use alloc::string::String;

/// Every failure the core can report.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// An argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// Operand shapes that do not fit together.
    #[error("shape error: {0}")]
    Shape(String),
    /// A NaN or infinity was produced.
    #[error("numeric error in {op}: {detail}")]
    Numeric { op: &'static str, detail: String },
    /// Misuse of an API contract (e.g. backward on a non-scalar).
    #[error("contract error: {0}")]
    Contract(String),
    /// An invalid or unsatisfiable configuration.
    #[error("configuration error: {0}")]
    Config(String),
    /// Bad or missing data (labels, splits, targets).
    #[error("data error: {0}")]
    Data(String),
    /// An object used in the wrong lifecycle state.
    #[error("state error: {0}")]
    State(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

macro_rules! bail {
    ($kind:ident, $($arg:tt)*) => {
        return Err($crate::error::Error::$kind(alloc::format!($($arg)*)))
    };
}
pub(crate) use bail;
