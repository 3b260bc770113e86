use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("dense materialization of {entries} entries exceeds the cap of {cap}")]
    Oversize { entries: u128, cap: usize },

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("variable does not belong to this tape")]
    InvalidVariable,

    #[error("unsupported operation: {0}")]
    UnsupportedOperation(String),

    #[error("invalid tangent vector: {0}")]
    InvalidTangent(String),

    #[error("tangent vectors live at different base points")]
    InvalidPair,

    #[error("degenerate point: {0}")]
    DegeneratePoint(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("method unavailable: {0}")]
    Unavailable(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

macro_rules! dim_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Dimension(format!($($arg)*))
    };
}
pub(crate) use dim_err;
