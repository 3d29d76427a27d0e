//! Plain 1D-CNN load estimator: every sensor (and the speed channel) is one
//! input channel over the window.

use htgnn_tensor::{NormStats, ParamId, ParamStore, Tape, Tensor, Var};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::model::{LoadModel, Mlp, Mode, ModelKind, OUTPUT_DIM};
use crate::sample::Batch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// No padding; each block shortens the sequence by `kernel - 1`.
    Valid,
    /// `(kernel - 1) / 2` zeros on each side.
    Same,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub layers: usize,
    pub channels: usize,
    pub hidden: usize,
    pub kernel: usize,
    pub dropout: f64,
    pub batchnorm: bool,
    pub padding: Padding,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            channels: 100,
            hidden: 100,
            kernel: 9,
            dropout: 0.5,
            batchnorm: true,
            padding: Padding::Same,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.channels == 0 || self.hidden == 0 || self.kernel == 0 {
            return Err(CoreError::Config("baseline sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(CoreError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.bn_eps.is_finite() && self.bn_eps > 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(CoreError::Config("batch-norm eps must be positive, momentum in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn pad(&self) -> usize {
        match self.padding {
            Padding::Valid => 0,
            Padding::Same => (self.kernel - 1) / 2,
        }
    }

    /// Sequence length after each conv block, starting from `window`.
    pub fn block_lengths(&self, window: usize) -> Result<Vec<usize>> {
        let mut len = window;
        let mut out = Vec::with_capacity(self.layers);
        for _ in 0..self.layers {
            let padded = len + 2 * self.pad();
            if padded < self.kernel {
                return Err(CoreError::Tensor(htgnn_tensor::TensorError::WindowTooShort {
                    len: padded,
                    kernel: self.kernel,
                }));
            }
            len = padded - self.kernel + 1;
            out.push(len);
        }
        Ok(out)
    }

    pub fn parameter_count(&self, in_channels: usize, window: usize) -> Result<usize> {
        self.validate()?;
        let last = *self.block_lengths(window)?.last().unwrap_or(&window);
        let mut n = 0;
        let mut c_in = in_channels;
        for _ in 0..self.layers {
            n += self.channels * c_in * self.kernel + self.channels;
            if self.batchnorm {
                n += 2 * self.channels;
            }
            c_in = self.channels;
        }
        Ok(n + Mlp::parameter_count(self.channels * last, self.hidden, 2, OUTPUT_DIM))
    }
}

#[derive(Debug, Clone)]
struct Block {
    w: ParamId,
    b: ParamId,
    /// gamma, beta, running mean, running variance
    norm: Option<(ParamId, ParamId, ParamId, ParamId)>,
}

/// Batch statistics observed in a training pass, one entry per block.
pub type ObservedStats = Vec<(Vec<f64>, Vec<f64>)>;

#[derive(Debug, Clone)]
pub struct CnnBaseline {
    cfg: BaselineConfig,
    n_t: usize,
    n_v: usize,
    window: usize,
    store: ParamStore,
    buffers: ParamStore,
    blocks: Vec<Block>,
    head: Mlp,
}

impl CnnBaseline {
    pub fn new(cfg: BaselineConfig, n_t: usize, n_v: usize, window: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let lengths = cfg.block_lengths(window)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut buffers = ParamStore::new();
        let mut blocks = Vec::with_capacity(cfg.layers);
        let mut c_in = n_t + n_v + 1;
        for i in 0..cfg.layers {
            let p = format!("baseline.block{i}");
            let fan_in = c_in * cfg.kernel;
            let w = store.insert_uniform(format!("{p}.conv.w"), &[cfg.channels, c_in, cfg.kernel], fan_in, &mut rng)?;
            let b = store.insert_uniform(format!("{p}.conv.b"), &[cfg.channels], fan_in, &mut rng)?;
            let norm = if cfg.batchnorm {
                let c = [cfg.channels];
                Some((
                    store.insert(format!("{p}.bn.gamma"), Tensor::full(&c, 1.0))?,
                    store.insert(format!("{p}.bn.beta"), Tensor::zeros(&c))?,
                    buffers.insert(format!("{p}.bn.running_mean"), Tensor::zeros(&c))?,
                    buffers.insert(format!("{p}.bn.running_var"), Tensor::full(&c, 1.0))?,
                ))
            } else {
                None
            };
            blocks.push(Block { w, b, norm });
            c_in = cfg.channels;
        }
        let flat = cfg.channels * lengths.last().copied().unwrap_or(window);
        let head = Mlp::new(&mut store, "baseline.head", flat, cfg.hidden, 2, OUTPUT_DIM, &mut rng)?;
        Ok(Self {
            cfg,
            n_t,
            n_v,
            window,
            store,
            buffers,
            blocks,
            head,
        })
    }

    pub fn config(&self) -> &BaselineConfig {
        &self.cfg
    }

    pub fn in_channels(&self) -> usize {
        self.n_t + self.n_v + 1
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn head(&self) -> &Mlp {
        &self.head
    }

    /// Stacks a batch into a `B x (N_T + N_V + 1) x L` tensor: temperature
    /// rows, vibration rows, then speed.
    pub fn input_tensor(&self, batch: &Batch) -> Result<Tensor> {
        if batch.n_t != self.n_t || batch.n_v != self.n_v || batch.window() != self.window {
            return Err(CoreError::Shape(format!(
                "batch has {} T / {} V channels and window {}, baseline expects {} / {} and {}",
                batch.n_t,
                batch.n_v,
                batch.window(),
                self.n_t,
                self.n_v,
                self.window
            )));
        }
        let (b, l) = (batch.len(), self.window);
        let mut data = Vec::with_capacity(b * self.in_channels() * l);
        for s in 0..b {
            data.extend_from_slice(&batch.x_t.data()[s * self.n_t * l..(s + 1) * self.n_t * l]);
            data.extend_from_slice(&batch.x_v.data()[s * self.n_v * l..(s + 1) * self.n_v * l]);
            data.extend_from_slice(batch.w.row(s));
        }
        Ok(Tensor::new(vec![b, self.in_channels(), l], data)?)
    }

    /// Forward pass reading parameters from `store` and running statistics
    /// from `buffers`. `batch_stats` normalizes with the current batch;
    /// `dropout` draws masks when given. Returns the observed batch
    /// statistics alongside the output.
    pub fn forward_with(
        &self,
        store: &ParamStore,
        buffers: &ParamStore,
        tape: &mut Tape,
        batch: &Batch,
        batch_stats: bool,
        mut dropout: Option<&mut dyn RngCore>,
    ) -> Result<(Var, ObservedStats)> {
        let input = self.input_tensor(batch)?;
        let b = batch.len();
        let mut h = tape.constant(input);
        let mut observed = Vec::new();
        for block in &self.blocks {
            let (w, bias) = (tape.param(store, block.w), tape.param(store, block.b));
            h = tape.conv1d(h, w, bias, self.cfg.pad())?;
            if let Some((gamma, beta, mean, var)) = block.norm {
                let stats = if batch_stats {
                    NormStats::Batch { eps: self.cfg.bn_eps }
                } else {
                    NormStats::Fixed {
                        mean: buffers.get(mean).value.data().to_vec(),
                        var: buffers.get(var).value.data().to_vec(),
                        eps: self.cfg.bn_eps,
                    }
                };
                let (g, be) = (tape.param(store, gamma), tape.param(store, beta));
                let (y, seen) = tape.batch_norm(h, g, be, &stats)?;
                h = y;
                observed.extend(seen);
            }
            h = tape.silu(h);
            if let Some(rng) = dropout.as_deref_mut() {
                if self.cfg.dropout > 0.0 {
                    let keep = 1.0 - self.cfg.dropout;
                    let shape = tape.shape(h).to_vec();
                    let n: usize = shape.iter().product();
                    let mask = (0..n)
                        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                        .collect();
                    let mask = tape.constant(Tensor::new(shape, mask)?);
                    h = tape.mul(h, mask)?;
                }
            }
        }
        let width = tape.value(h).len() / b.max(1);
        let flat = tape.reshape(h, &[b, width])?;
        let out = self.head.forward(tape, store, flat)?;
        Ok((out, observed))
    }

    /// Folds observed batch statistics into the running estimates. Block `i`
    /// normalized `batch * lengths[i]` values per channel; the running
    /// variance tracks the unbiased estimate.
    pub fn update_running_stats(&mut self, observed: &ObservedStats, batch: usize) -> Result<()> {
        let lengths = self.cfg.block_lengths(self.window)?;
        let m = self.cfg.bn_momentum;
        let norms = self.blocks.iter().filter_map(|b| b.norm);
        for (((_, _, mean_id, var_id), (mean, var)), len) in norms.zip(observed).zip(lengths) {
            let n = batch * len;
            let correction = if n > 1 { n as f64 / (n - 1) as f64 } else { 1.0 };
            for (r, &x) in self.buffers.get_mut(mean_id).value.data_mut().iter_mut().zip(mean) {
                *r = (1.0 - m) * *r + m * x;
            }
            for (r, &x) in self.buffers.get_mut(var_id).value.data_mut().iter_mut().zip(var) {
                *r = (1.0 - m) * *r + m * x * correction;
            }
        }
        Ok(())
    }
}

impl LoadModel for CnnBaseline {
    fn kind(&self) -> ModelKind {
        ModelKind::Cnn
    }

    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn buffers(&self) -> Option<&ParamStore> {
        Some(&self.buffers)
    }

    fn buffers_mut(&mut self) -> Option<&mut ParamStore> {
        Some(&mut self.buffers)
    }

    fn forward(&mut self, tape: &mut Tape, batch: &Batch, mode: Mode<'_>) -> Result<Var> {
        match mode {
            Mode::Eval => Ok(self.forward_with(&self.store, &self.buffers, tape, batch, false, None)?.0),
            Mode::Train(rng) => {
                let (out, observed) = self.forward_with(&self.store, &self.buffers, tape, batch, true, Some(rng))?;
                self.update_running_stats(&observed, batch.len())?;
                Ok(out)
            }
        }
    }
}
