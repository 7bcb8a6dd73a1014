use thiserror::Error;

/// Errors produced anywhere in the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("timestamp regression at line {line}: {ts} is more than {tolerance_ns} ns before {max_seen}")]
    TimestampRegression {
        line: u64,
        ts: i64,
        max_seen: i64,
        tolerance_ns: i64,
    },

    #[error("not warmed up: {0}")]
    NotWarmedUp(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate portfolio: a_prev * y + 1 = {0} <= 0")]
    DegeneratePortfolio(f64),

    #[error("network spec error: {0}")]
    Spec(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("numerics error: {0}")]
    Numerics(String),

    #[error("invalid update: {0}")]
    InvalidUpdate(String),

    #[error("not ready: {0}")]
    NotReady(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// True for errors caused by bad input data rather than bad usage or numerics.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::TimestampRegression { .. }
                | Error::NotWarmedUp(_)
                | Error::Domain(_)
                | Error::DegeneratePortfolio(_)
                | Error::Csv(_)
        )
    }

    pub fn is_numerics_error(&self) -> bool {
        matches!(self, Error::Numerics(_))
    }
}
