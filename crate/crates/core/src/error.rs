use thiserror::Error;

/// Errors raised across the modelling, data and evaluation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's documented precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A non-finite value appeared while recording or differentiating a graph.
    #[error("numeric failure at node {node} ({op})")]
    NumericFailure { node: usize, op: &'static str },

    #[error("empty context set")]
    EmptyContext,

    #[error("tile {tile_id} too sparse: {count} footprints, need at least {min}")]
    TileTooSparse { tile_id: u32, count: usize, min: usize },

    #[error("training diverged at step {step}")]
    Divergence { step: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("partition infeasible: buffering removed every training tile")]
    PartitionInfeasible,

    #[error("evaluation set is empty")]
    EvaluationEmpty,

    /// Too few values, or no spread, for a statistic to be defined.
    #[error("undefined statistic: {0}")]
    Undefined(String),

    #[error("tile {tile_id} cannot be stratified: no surrounding-year observations on one side of the test year")]
    StratificationUnavailable { tile_id: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}
