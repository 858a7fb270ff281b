use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("value out of domain: {0}")]
    Domain(String),

    #[error("invalid acquisition parameters: {0}")]
    Params(String),

    #[error("invalid scene: {0}")]
    Scene(String),

    #[error("configuration cannot be satisfied: {0}")]
    Config(String),

    #[error("acceptance window undefined: expected count per period is zero")]
    UndefinedWindow,

    #[error("no pixel carries any timestamp; nothing to estimate")]
    NoData,

    #[error("dimension mismatch: expected {expected:?}, got {got:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
