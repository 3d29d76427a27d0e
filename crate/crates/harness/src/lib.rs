//! Experiment harness for the bearing-load models: configuration,
//! condition-level splits, training, evaluation and checkpoints.

pub mod checkpoint;
pub mod config;
mod error;
pub mod experiment;
pub mod metrics;
pub mod normalize;
pub mod split;
pub mod train;

pub use checkpoint::{Architecture, Checkpoint};
pub use config::{DataConfig, ExperimentConfig, SplitConfig, TrainConfig};
pub use error::{HarnessError, Result};
pub use experiment::{run, simulate_dataset, Prepared, RunOutput};
pub use metrics::{evaluate, CaseMetrics, MetricsReport};
pub use normalize::Normalizer;
pub use split::{make_split, SplitPlan, WindowSplit};
pub use train::{train, EarlyStopping, StopDecision, TrainReport};
