//! Heterogeneous temporal graph load estimator for instrumented bearings,
//! and the 1D-CNN baseline it is compared against.
//!
//! Data flow: a [`sample::Batch`] of sensor windows goes through the
//! [`dynamics`] encoders, [`interaction`] message passing over a
//! [`hetgraph::HeteroGraph`], and an MLP head producing axial and radial
//! load.

pub mod baseline;
pub mod dynamics;
mod error;
pub mod hetgraph;
pub mod interaction;
pub mod model;
pub mod sample;

pub use baseline::{BaselineConfig, CnnBaseline, Padding};
pub use error::{CoreError, Result};
pub use hetgraph::{HeteroGraph, MetaType, Relation, RigLayout, SensorNode, SubType};
pub use model::{l1_loss, parameter_count, Htgnn, LoadModel, Mode, ModelConfig, ModelKind, OUTPUT_DIM};
pub use sample::{Batch, GraphBatch, WindowSample};
