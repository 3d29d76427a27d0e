//! The heterogeneous temporal graph load estimator and the interface shared
//! with the CNN baseline.

use htgnn_tensor::{ParamId, ParamStore, Tape, Tensor, Var};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{ConvStackConfig, DynamicsDims, DynamicsEncoder};
use crate::error::{CoreError, Result};
use crate::hetgraph::{HeteroGraph, MetaType};
use crate::interaction::InteractionStack;
use crate::sample::{Batch, GraphBatch};

/// Number of predicted load components: axial and radial.
pub const OUTPUT_DIM: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub node_embedding_dim: usize,
    pub gnn_layers: usize,
    pub gnn_hidden: usize,
    pub head_hidden: usize,
    /// Linear layers in the prediction head, output layer included.
    pub head_layers: usize,
    pub window: usize,
    pub conv: ConvStackConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            node_embedding_dim: 10,
            gnn_layers: 3,
            gnn_hidden: 80,
            head_hidden: 40,
            head_layers: 2,
            window: 30,
            conv: ConvStackConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("node_embedding_dim", self.node_embedding_dim),
            ("gnn_layers", self.gnn_layers),
            ("gnn_hidden", self.gnn_hidden),
            ("head_hidden", self.head_hidden),
            ("head_layers", self.head_layers),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(CoreError::Config(format!("{name} must be positive")));
        }
        self.conv.output_len(self.window)?;
        Ok(())
    }

    pub fn dynamics_dims(&self) -> DynamicsDims {
        DynamicsDims::uniform(self.node_embedding_dim)
    }
}

/// Exact number of trainable scalars of an HTGNN over a graph with `n_t`
/// temperature and `n_v` vibration nodes.
pub fn parameter_count(cfg: &ModelConfig, n_t: usize, n_v: usize) -> Result<usize> {
    cfg.validate()?;
    let d = cfg.dynamics_dims();
    let cnn = |out| cfg.conv.parameter_count(cfg.window, out);
    let h = d.temperature;
    let mut gru = 3 * (h + h * h + h);
    if d.speed != h {
        gru += d.speed * h + h;
    }
    let dynamics = cnn(d.speed)? + cnn(d.vibration)? + gru;
    let interaction =
        InteractionStack::parameter_count(cfg.gnn_layers, (h, d.vibration + d.speed), cfg.gnn_hidden);
    let head = Mlp::parameter_count((n_t + n_v) * cfg.gnn_hidden, cfg.head_hidden, cfg.head_layers, OUTPUT_DIM);
    Ok(dynamics + interaction + head)
}

/// Mean over samples of the summed absolute error across load components.
pub fn l1_loss(tape: &mut Tape, pred: Var, target: Var) -> Result<Var> {
    if tape.shape(pred) != tape.shape(target) {
        return Err(CoreError::Shape(format!(
            "prediction {:?} vs target {:?}",
            tape.shape(pred),
            tape.shape(target)
        )));
    }
    let m = tape.shape(pred)[0];
    if m == 0 {
        return Err(CoreError::Shape("loss over an empty batch".into()));
    }
    let d = tape.sub(pred, target)?;
    let a = tape.abs(d);
    let s = tape.sum(a);
    Ok(tape.scale(s, 1.0 / m as f64))
}

/// Fully connected layers with SiLU between them (none after the last).
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<(ParamId, ParamId)>,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        n_layers: usize,
        output: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if n_layers == 0 {
            return Err(CoreError::Config("the head needs at least one layer".into()));
        }
        let mut layers = Vec::with_capacity(n_layers);
        let mut fan_in = input;
        for l in 0..n_layers {
            let out = if l + 1 == n_layers { output } else { hidden };
            let w = store.insert_uniform(format!("{prefix}.fc{l}.w"), &[fan_in, out], fan_in, rng)?;
            let b = store.insert_uniform(format!("{prefix}.fc{l}.b"), &[out], fan_in, rng)?;
            layers.push((w, b));
            fan_in = out;
        }
        Ok(Self { layers })
    }

    pub fn parameter_count(input: usize, hidden: usize, n_layers: usize, output: usize) -> usize {
        let mut n = 0;
        let mut fan_in = input;
        for l in 0..n_layers {
            let out = if l + 1 == n_layers { output } else { hidden };
            n += fan_in * out + out;
            fan_in = out;
        }
        n
    }

    pub fn layers(&self) -> &[(ParamId, ParamId)] {
        &self.layers
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, mut x: Var) -> Result<Var> {
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            let (w, b) = (tape.param(store, w), tape.param(store, b));
            let y = tape.matmul(x, w)?;
            x = tape.add_bias(y, b)?;
            if l + 1 < self.layers.len() {
                x = tape.silu(x);
            }
        }
        Ok(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Htgnn,
    Cnn,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Htgnn => "htgnn",
            ModelKind::Cnn => "cnn",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "htgnn" => Ok(ModelKind::Htgnn),
            "cnn" => Ok(ModelKind::Cnn),
            _ => Err(CoreError::Config(format!("unknown model kind {s:?}"))),
        }
    }
}

/// Evaluation is deterministic; training may draw dropout masks.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut dyn RngCore),
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

/// A trainable load estimator mapping a batch of windows to `B x 2` loads.
pub trait LoadModel {
    fn kind(&self) -> ModelKind;

    fn params(&self) -> &ParamStore;

    fn params_mut(&mut self) -> &mut ParamStore;

    /// Non-trainable state saved alongside the parameters.
    fn buffers(&self) -> Option<&ParamStore> {
        None
    }

    fn buffers_mut(&mut self) -> Option<&mut ParamStore> {
        None
    }

    /// Records the forward pass on `tape`. Training mode may update internal
    /// statistics.
    fn forward(&mut self, tape: &mut Tape, batch: &Batch, mode: Mode<'_>) -> Result<Var>;

    fn predict(&mut self, batch: &Batch) -> Result<Tensor> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, batch, Mode::Eval)?;
        Ok(tape.value(out).clone())
    }
}

/// Speed-conditioned dynamics encoders, stacked heterogeneous message
/// passing and an MLP head over the flattened node representations.
#[derive(Debug, Clone)]
pub struct Htgnn {
    cfg: ModelConfig,
    graph: HeteroGraph,
    store: ParamStore,
    dynamics: DynamicsEncoder,
    interaction: InteractionStack,
    head: Mlp,
}

impl Htgnn {
    pub fn new(cfg: ModelConfig, graph: HeteroGraph, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let dynamics = DynamicsEncoder::new(&mut store, &cfg.conv, cfg.window, cfg.dynamics_dims(), &mut rng)?;
        let interaction =
            InteractionStack::new(&mut store, cfg.gnn_layers, dynamics.output_widths(), cfg.gnn_hidden, &mut rng)?;
        let flat = (graph.node_count(MetaType::T) + graph.node_count(MetaType::V)) * cfg.gnn_hidden;
        let head = Mlp::new(&mut store, "head", flat, cfg.head_hidden, cfg.head_layers, OUTPUT_DIM, &mut rng)?;
        Ok(Self {
            cfg,
            graph,
            store,
            dynamics,
            interaction,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn graph(&self) -> &HeteroGraph {
        &self.graph
    }

    pub fn dynamics(&self) -> &DynamicsEncoder {
        &self.dynamics
    }

    pub fn interaction(&self) -> &InteractionStack {
        &self.interaction
    }

    pub fn head(&self) -> &Mlp {
        &self.head
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        let n_t = self.graph.node_count(MetaType::T);
        let n_v = self.graph.node_count(MetaType::V);
        if batch.n_t != n_t || batch.n_v != n_v || batch.window() != self.cfg.window {
            return Err(CoreError::Shape(format!(
                "batch has {} T / {} V nodes and window {}, model expects {n_t} / {n_v} and {}",
                batch.n_t,
                batch.n_v,
                batch.window(),
                self.cfg.window
            )));
        }
        Ok(())
    }

    /// Final per-type node representations, `B*N_T x H` and `B*N_V x H`.
    pub fn node_representations(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        batch: &Batch,
    ) -> Result<(Var, Var, GraphBatch)> {
        self.check_batch(batch)?;
        let emb = self.dynamics.forward(tape, store, batch)?;
        let graph = GraphBatch::new(&self.graph, batch.len())?;
        let (h_t, h_v) = self.interaction.forward(tape, store, &graph, emb.h_t, emb.h_v)?;
        Ok((h_t, h_v, graph))
    }

    /// Forward pass reading parameters from `store`, which must have the
    /// layout of [`Htgnn::store`].
    pub fn forward_with(&self, store: &ParamStore, tape: &mut Tape, batch: &Batch) -> Result<Var> {
        let (h_t, h_v, _) = self.node_representations(store, tape, batch)?;
        let b = batch.len();
        let h = self.cfg.gnn_hidden;
        let flat_t = tape.reshape(h_t, &[b, batch.n_t * h])?;
        let flat_v = tape.reshape(h_v, &[b, batch.n_v * h])?;
        let flat = tape.concat_cols(flat_t, flat_v)?;
        self.head.forward(tape, store, flat)
    }
}

impl LoadModel for Htgnn {
    fn kind(&self) -> ModelKind {
        ModelKind::Htgnn
    }

    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn forward(&mut self, tape: &mut Tape, batch: &Batch, _mode: Mode<'_>) -> Result<Var> {
        self.forward_with(&self.store, tape, batch)
    }
}
