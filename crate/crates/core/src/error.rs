use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty location set")]
    EmptyLocationSet,

    #[error("invalid location {id}: {reason}")]
    InvalidLocation { id: String, reason: String },

    #[error("duplicate location id {0}")]
    DuplicateLocation(String),

    #[error("malformed subdaily block: expected {expected} readings, got {got}")]
    MalformedSubdaily { expected: usize, got: usize },

    #[error("{path}: line {line}: {reason}")]
    Schema {
        path: String,
        line: u64,
        reason: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("insufficient samples for climatology at day {day}: {count} < 2")]
    InsufficientSamples { day: usize, count: usize },

    #[error("degenerate climatology sd at day {day}")]
    DegenerateSd { day: usize },

    #[error("climatology source mismatch: expected {expected}, got {got}")]
    SourceMismatch { expected: String, got: String },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("gap before event at day {day}")]
    GapBeforeEvent { day: usize },

    #[error("no observations")]
    NoObservations,

    #[error("event time {time} outside 1..={horizon}")]
    EventOutOfRange { time: usize, horizon: usize },

    #[error("invalid survival curve: {0}")]
    InvalidCurve(String),

    #[error("empty ensemble")]
    EmptyEnsemble,

    #[error("no rank records")]
    NoRecords,

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
