use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("infeasible delay: c0*tau = {path_length} m does not exceed the antenna separation {d_ant} m")]
    InfeasibleDelay { path_length: f64, d_ant: f64 },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("ill-conditioned chart grid: {which} has condition number {condition:.3e}")]
    IllConditionedGrid { which: &'static str, condition: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error("non-finite covariance in track {track_id}")]
    NonFiniteCovariance { track_id: u64 },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    pub(crate) fn parse(offset: u64, msg: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            message: msg.into(),
        }
    }
}
