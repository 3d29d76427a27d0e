//! Dense `f64` tensors, a reverse-mode tape, AdamW, and a parameter
//! container. Everything the load-prediction models are built from.

pub mod checkpoint;
mod error;
pub mod gradcheck;
mod linalg;
pub mod optim;
mod params;
mod tape;
mod tensor;

pub use checkpoint::{ParamContainer, ParamRecord};
pub use error::{Result, TensorError};
pub use optim::{adamw_step, AdamW, AdamWConfig};
pub use params::{ParamId, ParamStore, Parameter};
pub use tape::{ChannelStats, Gradients, NormStats, Tape, Var};
pub use tensor::Tensor;
