use thiserror::Error;

#[derive(Debug, Error)]
pub enum TsamError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("config error in `{field}`: {msg}")]
    Config { field: String, msg: String },
    #[error("line {line}: {msg}")]
    Data { line: usize, msg: String },
    #[error("unknown emotion label `{0}`")]
    UnknownEmotion(String),
    #[error("training diverged at epoch {epoch}, batch {batch}: loss is {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },
    #[error("non-deterministic function: repeated evaluation gave {first} then {second}")]
    NonDeterministic { first: f64, second: f64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = TsamError> = std::result::Result<T, E>;

pub(crate) fn config_err(field: &str, msg: impl Into<String>) -> TsamError {
    TsamError::Config {
        field: field.to_string(),
        msg: msg.into(),
    }
}
