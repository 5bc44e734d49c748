use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("value {value} overflows format {format}")]
    Overflow { value: String, format: String },

    #[error("NaN/Inf is not supported: {0}")]
    UnsupportedSpecial(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("operation needs at least one operand")]
    Empty,

    #[error("every exponent lane is inert (zero operand)")]
    AllLanesInert,

    #[error("{count} weights do not fit a {rows}-row array")]
    TooManyRows { count: usize, rows: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("search space of {cases} cases exceeds the cap of {cap}")]
    SpaceTooLarge { cases: u128, cap: u64 },

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("division by zero: {0}")]
    DivisionByZero(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn parse(row: usize, column: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            row,
            column,
            message: message.into(),
        }
    }
}
