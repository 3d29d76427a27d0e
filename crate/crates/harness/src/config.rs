//! Experiment configuration, read from TOML.
//!
//! Every section is optional; missing keys take their defaults. A complete
//! file looks like
//!
//! ```toml
//! [data]
//! seed = 2024          # simulator master seed
//! duration_s = 600     # seconds per case
//!
//! [data.grid]
//! axial_kn = [1000.0, 2000.0]
//! radial_kn = [100.0, 200.0]
//! speed_rpm = [10.0, 20.0]
//!
//! [simulator]          # see SimConstants
//! vib_noise = 0.02
//!
//! [preprocess]
//! smoothing_window = 60
//! rate_span = 300
//! window = 30
//! stride = 5
//!
//! [split]
//! seed = 11
//! holdout = 12
//! test_fraction = 0.45
//! validation_fraction = 0.2
//!
//! [train]
//! seed = 0
//! batch_size = 512
//! max_epochs = 50
//! patience = 10
//! min_epochs = 30
//! learning_rate = 1e-3
//! weight_decay = 0.01
//!
//! [model]              # see ModelConfig
//! gnn_hidden = 80
//!
//! [baseline]           # see BaselineConfig
//! channels = 100
//! ```

use std::path::Path;

use htgnn_core::{BaselineConfig, ModelConfig};
use htgnn_rig::{GridSpec, PreprocessConfig, SimConstants};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub seed: u64,
    pub duration_s: usize,
    pub grid: GridSpec,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            seed: 2024,
            duration_s: 600,
            grid: GridSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub seed: u64,
    /// Conditions withheld from training and validation.
    pub holdout: usize,
    /// Target share of all windows that end up in the test set.
    pub test_fraction: f64,
    /// Share of training-pool windows moved to validation.
    pub validation_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            seed: 11,
            holdout: 12,
            test_fraction: 0.45,
            validation_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Early stopping cannot fire before this epoch.
    pub min_epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            batch_size: 512,
            max_epochs: 50,
            patience: 10,
            min_epochs: 30,
            learning_rate: 1e-3,
            weight_decay: 0.01,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(HarnessError::Config("batch_size, max_epochs and patience must be positive".into()));
        }
        let positive = self.learning_rate.is_finite() && self.learning_rate > 0.0;
        let decay = self.weight_decay.is_finite() && self.weight_decay >= 0.0;
        if !positive || !decay {
            return Err(HarnessError::Config("learning rate must be positive and weight decay non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub simulator: SimConstants,
    pub preprocess: PreprocessConfig,
    pub split: SplitConfig,
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub baseline: BaselineConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.simulator.validate()?;
        self.preprocess.validate()?;
        self.train.validate()?;
        self.model.validate()?;
        self.baseline.validate()?;
        if self.model.window != self.preprocess.window {
            return Err(HarnessError::Config(format!(
                "model window {} differs from preprocessing window {}",
                self.model.window, self.preprocess.window
            )));
        }
        let s = &self.split;
        if !(0.0..1.0).contains(&s.validation_fraction) || !(0.0..1.0).contains(&s.test_fraction) {
            return Err(HarnessError::Config("split fractions must lie in [0, 1)".into()));
        }
        Ok(())
    }
}
