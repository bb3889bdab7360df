use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("option index {index} out of range 1..={len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("length mismatch for {what}: expected {expected}, found {found}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("row {row}: chosen option {chosen} is not offered")]
    ChosenNotOffered { row: usize, chosen: usize },

    #[error("unidentifiable fit ({reason}); offending buckets: {buckets:?}")]
    Unidentifiable { reason: String, buckets: Vec<usize> },

    #[error("insufficient rows: need at least {needed}, found {found}")]
    InsufficientRows { needed: usize, found: usize },

    #[error("schema version mismatch: expected {expected}, found {found}")]
    SchemaVersion { expected: u32, found: u32 },

    #[error("{rejected} of {total} rows malformed (limit {limit:.2}%); first: {first}")]
    TooManyRejects {
        rejected: usize,
        total: usize,
        limit: f64,
        first: String,
    },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
