use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("trace too short: {len} slots, need at least {required}")]
    TraceTooShort { len: usize, required: usize },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("circulant embedding is not positive definite (min eigenvalue {min_eigenvalue:e})")]
    EmbeddingNotPositive { min_eigenvalue: f64 },

    #[error("q = {0} is missing from the fitted q-grid")]
    MissingQ(f64),

    #[error("cannot schedule into the past: event slot {slot} < current slot {now}")]
    ScheduleInPast { slot: u64, now: u64 },

    #[error("flow {flow} (started at slot {start_slot}) was already released")]
    DoubleRelease { flow: String, start_slot: u64 },

    #[error("unknown flow session {flow} (started at slot {start_slot})")]
    UnknownRelease { flow: String, start_slot: u64 },

    #[error("config error at `{path}`: {reason}")]
    Config { path: String, reason: String },

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn config(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
