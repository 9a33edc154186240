use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch at layer {layer}: {detail}")]
    Shape { layer: usize, detail: String },

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value at {path}")]
    Numeric { path: String },

    #[error("participant {0} has no routing entry")]
    Unrouted(String),

    #[error("participants without a trained embedding (excluded): {}", .0.join(", "))]
    UnseenParticipants(Vec<String>),

    #[error("duplicate record for participant {participant} on {date}")]
    DuplicateRecord { participant: String, date: String },

    #[error("grid config lr={learning_rate} dropout={dropout_rate} failed: {source}")]
    GridConfig {
        learning_rate: f64,
        dropout_rate: f64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

