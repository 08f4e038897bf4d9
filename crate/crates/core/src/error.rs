use thiserror::Error;

/// Every failure mode the engine reports.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("unknown node {0}")]
    UnknownNode(u64),
    #[error("no path between {from} and {to}")]
    NoPath { from: u64, to: u64 },
    #[error("instruction generation failed: {0}")]
    Generation(String),
    #[error("world validation failed at line {line}: {msg}")]
    WorldValidation { line: usize, msg: String },
    #[error("illegal transition from {from:?} to {to}")]
    IllegalTransition { from: Option<u64>, to: u64 },
    #[error("cosine undefined for zero-norm feature")]
    UndefinedCosine,
    #[error("encoding error: {0}")]
    Encoding(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("fusion error: {0}")]
    Fusion(String),
    #[error("routing error: no real route to node {0}")]
    Routing(u64),
    #[error("supervision error: {0}")]
    Supervision(String),
    #[error("numerical error in tensor `{tensor}`: {msg}")]
    Numerical { tensor: String, msg: String },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("imagination tree exhausted at depth {0}")]
    ExpansionExhausted(usize),
    #[error("evaluation error: {0}")]
    Evaluation(String),
    #[error("aggregation error: empty record set")]
    EmptyAggregation,
    #[error("training diverged at epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
