use htgnn_tensor::TensorError;
use thiserror::Error;

use crate::hetgraph::Relation;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid sensor layout: {0}")]
    InvalidLayout(String),
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("unknown relation {0:?}")]
    UnknownRelation(String),
    #[error("{relation}: node {index} out of range ({count} target nodes)")]
    NodeOutOfRange {
        relation: Relation,
        index: usize,
        count: usize,
    },
    #[error("{0} is not a same-type relation")]
    NotSameType(Relation),
    #[error("{0} is not a cross-type relation")]
    NotCrossType(Relation),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;
