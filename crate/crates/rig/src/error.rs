use thiserror::Error;

#[derive(Debug, Error)]
pub enum RigError {
    #[error("invalid condition grid: {0}")]
    Grid(String),
    #[error("duration {0} s outside [{min}, {max}]", min = crate::simulate::MIN_DURATION_S, max = crate::simulate::MAX_DURATION_S)]
    Duration(usize),
    #[error("series of length {len} is too short for a span of {span}")]
    TooShort { len: usize, span: usize },
    #[error("invalid simulator constants: {0}")]
    Constants(String),
    #[error("malformed dataset: {0}")]
    Format(String),
    #[error(transparent)]
    Core(#[from] htgnn_core::CoreError),
    #[error(transparent)]
    Tensor(#[from] htgnn_tensor::TensorError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = RigError> = std::result::Result<T, E>;
