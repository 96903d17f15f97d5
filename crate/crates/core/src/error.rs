use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("unknown bus `{0}`")]
    UnknownBus(String),

    #[error("unknown meter `{0}`")]
    UnknownMeter(String),

    #[error("missing nominal voltage on bus `{0}`")]
    MissingNominalVoltage(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("load flow did not converge for snapshot {0}")]
    NonConvergence(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("version conflict: expected {expected}, current {current}")]
    Conflict { expected: u64, current: u64 },

    #[error("not found: {0}")]
    NotFound(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn at_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
