//! Self-contained JSON checkpoints: configuration, node order, input and
//! target scaling, parameters and (for the baseline) running statistics.

use std::path::Path;

use htgnn_core::hetgraph::{HeteroGraph, MetaType, RigLayout};
use htgnn_core::{BaselineConfig, CnnBaseline, Htgnn, LoadModel, ModelConfig, ModelKind};
use htgnn_tensor::ParamContainer;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::normalize::Normalizer;

pub const FORMAT_VERSION: u32 = 1;

/// Architecture of a load model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Architecture {
    Htgnn(ModelConfig),
    Cnn { config: BaselineConfig, window: usize },
}

impl Architecture {
    pub fn kind(&self) -> ModelKind {
        match self {
            Architecture::Htgnn(_) => ModelKind::Htgnn,
            Architecture::Cnn { .. } => ModelKind::Cnn,
        }
    }

    pub fn window(&self) -> usize {
        match self {
            Architecture::Htgnn(cfg) => cfg.window,
            Architecture::Cnn { window, .. } => *window,
        }
    }

    /// Freshly initialized model for `layout`.
    pub fn build(&self, layout: &RigLayout, seed: u64) -> Result<Box<dyn LoadModel>> {
        Ok(match self {
            Architecture::Htgnn(cfg) => {
                let graph = HeteroGraph::build_bearing_graph(layout)?;
                Box::new(Htgnn::new(cfg.clone(), graph, seed)?)
            }
            Architecture::Cnn { config, window } => {
                let n_t = layout.ordered(MetaType::T).len();
                let n_v = layout.ordered(MetaType::V).len();
                Box::new(CnnBaseline::new(config.clone(), n_t, n_v, *window, seed)?)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub architecture: Architecture,
    pub layout: RigLayout,
    /// Sensor ids in the row order the model expects.
    pub node_order: Vec<String>,
    pub normalizer: Normalizer,
    pub params: ParamContainer,
    pub buffers: Option<ParamContainer>,
    pub best_epoch: usize,
}

impl Checkpoint {
    pub fn capture(
        architecture: Architecture,
        layout: &RigLayout,
        normalizer: Normalizer,
        model: &dyn LoadModel,
        best_epoch: usize,
    ) -> Self {
        let node_order = layout
            .ordered(MetaType::T)
            .into_iter()
            .chain(layout.ordered(MetaType::V))
            .map(|n| n.id)
            .collect();
        Self {
            format_version: FORMAT_VERSION,
            architecture,
            layout: layout.clone(),
            node_order,
            normalizer,
            params: ParamContainer::from_store(model.params()),
            buffers: model.buffers().map(ParamContainer::from_store),
            best_epoch,
        }
    }

    /// Rebuilds the trained model.
    pub fn model(&self) -> Result<Box<dyn LoadModel>> {
        let mut model = self.architecture.build(&self.layout, 0)?;
        self.params.load_into(model.params_mut())?;
        match (&self.buffers, model.buffers_mut()) {
            (Some(saved), Some(store)) => saved.load_into(store)?,
            (None, None) => {}
            _ => return Err(HarnessError::Checkpoint("buffer set does not match the architecture".into())),
        }
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Self = serde_json::from_str(text)?;
        if ckpt.format_version != FORMAT_VERSION {
            return Err(HarnessError::Checkpoint(format!(
                "format version {} is not supported (expected {FORMAT_VERSION})",
                ckpt.format_version
            )));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
