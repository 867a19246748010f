use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("precision mismatch: ({p1}, K={k1}) vs ({p2}, K={k2})")]
    PrecisionMismatch { p1: u64, k1: u32, p2: u64, k2: u32 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("range violation: {0}")]
    Range(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("group spec mismatch")]
    SpecMismatch,
    #[error("problem too large: {0}")]
    TooLarge(String),
    #[error("did not converge: {0}")]
    NotConverged(String),
    #[error("hensel criterion fails: smallest pivot valuation s={s}, input precision m={m}")]
    HenselCriterion { s: u32, m: u32 },
    #[error("empty level range: l={l}, n={n}")]
    EmptyLevelRange { l: i64, n: i64 },
    #[error("empty input")]
    Empty,
    #[error("io: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
