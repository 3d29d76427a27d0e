#![allow(dead_code)]

use htgnn_harness::ExperimentConfig;

/// A four-condition dataset and small models that train in seconds.
pub const SMALL_CONFIG: &str = r#"
[data]
seed = 5
duration_s = 600

[data.grid]
axial_kn = [1000.0, 3000.0]
radial_kn = [100.0, 300.0]
speed_rpm = [10.0]

[preprocess]
stride = 10

[split]
seed = 2
holdout = 1

[train]
seed = 3
batch_size = 16
max_epochs = 3
patience = 2
min_epochs = 0

[model]
node_embedding_dim = 3
gnn_layers = 1
gnn_hidden = 4
head_hidden = 6

[baseline]
layers = 2
channels = 4
hidden = 6
kernel = 3
"#;

pub fn small_config() -> ExperimentConfig {
    ExperimentConfig::from_toml(SMALL_CONFIG).unwrap()
}
