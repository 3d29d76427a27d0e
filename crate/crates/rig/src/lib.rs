//! Synthetic data for the two-bearing rig: operating-condition grids, a
//! simple physics-flavoured signal generator, preprocessing into model
//! windows, and CSV storage.

pub mod conditions;
pub mod dataset;
mod error;
pub mod preprocess;
pub mod simulate;

pub use conditions::{generate_condition_grid, GridSpec, OperatingCondition};
pub use dataset::{CaseRole, Dataset, ManifestEntry};
pub use error::{Result, RigError};
pub use preprocess::{moving_average, preprocess_case, rms_resample, temperature_rate, window_slice, PreprocessConfig, ProcessedCase};
pub use simulate::{CaseRecording, SimConstants, Simulator};
