use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("window of length {len} is too short (need at least {min})")]
    DegenerateWindow { len: usize, min: usize },

    #[error("zero-variance window: autocorrelation is undefined")]
    ZeroVariance,

    #[error("no validated period: STL parameters unavailable")]
    NoPeriod,

    #[error("window of length {len} holds fewer than two cycles of period {period}")]
    InsufficientCycles { len: usize, period: usize },

    #[error("series are misaligned: {0}")]
    Misaligned(String),

    #[error("empty range: {0}")]
    EmptyRange(String),

    #[error("labels must contain both classes")]
    SingleClass,

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("too many malformed rows: {skipped} of {total} skipped")]
    TooManyBadRows { skipped: usize, total: usize },

    #[error("snapshot: {0}")]
    Snapshot(String),

    #[error("parse: {0}")]
    Parse(String),
}
