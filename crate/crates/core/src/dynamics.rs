//! Per-node dynamics extraction.
//!
//! The speed window is encoded once per sample into a context vector `h_w`.
//! Temperature nodes run a GRU over their rate series starting from `h_w`;
//! vibration nodes go through a CNN and get `h_w` appended. Weights are
//! shared across all nodes of a type.

use std::sync::Arc;

use htgnn_tensor::{ParamId, ParamStore, Tape, Tensor, TensorError, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::sample::Batch;

/// Channel and kernel sizes of the three-stage convolution stack.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvStackConfig {
    pub channels: Vec<usize>,
    pub kernels: Vec<usize>,
}

impl Default for ConvStackConfig {
    fn default() -> Self {
        Self {
            channels: vec![2, 2, 1],
            kernels: vec![3, 5, 5],
        }
    }
}

impl ConvStackConfig {
    /// Length left after the valid convolutions, or an error if the window
    /// is too short.
    pub fn output_len(&self, window: usize) -> Result<usize> {
        if self.channels.len() != self.kernels.len() || self.channels.is_empty() {
            return Err(CoreError::Config(
                "conv stack needs matching, non-empty channel and kernel lists".into(),
            ));
        }
        if self.channels.contains(&0) || self.kernels.contains(&0) {
            return Err(CoreError::Config("conv channels and kernels must be positive".into()));
        }
        let shrink: usize = self.kernels.iter().map(|k| k - 1).sum();
        if window < shrink + 1 {
            return Err(CoreError::Tensor(TensorError::WindowTooShort {
                len: window,
                kernel: shrink + 1,
            }));
        }
        Ok(window - shrink)
    }

    /// Flattened width fed to the projection.
    pub fn flat_width(&self, window: usize) -> Result<usize> {
        Ok(self.output_len(window)? * self.channels.last().copied().unwrap_or(1))
    }

    pub fn parameter_count(&self, window: usize, out_dim: usize) -> Result<usize> {
        let flat = self.flat_width(window)?;
        let mut c_in = 1;
        let mut n = 0;
        for (&c, &k) in self.channels.iter().zip(&self.kernels) {
            n += c * c_in * k + c;
            c_in = c;
        }
        Ok(n + flat * out_dim + out_dim)
    }
}

fn linear(tape: &mut Tape, store: &ParamStore, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
    let (w, b) = (tape.param(store, w), tape.param(store, b));
    let y = tape.matmul(x, w)?;
    Ok(tape.add_bias(y, b)?)
}

/// Conv stack (SiLU after every stage), flatten, linear projection, SiLU.
/// Maps each row of an `R x L` input to a `d`-vector.
#[derive(Debug, Clone)]
pub struct CnnEncoder {
    convs: Vec<(ParamId, ParamId)>,
    proj_w: ParamId,
    proj_b: ParamId,
    window: usize,
    flat: usize,
    out_dim: usize,
}

impl CnnEncoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        cfg: &ConvStackConfig,
        window: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let flat = cfg.flat_width(window)?;
        let mut convs = Vec::new();
        let mut c_in = 1;
        for (i, (&c, &k)) in cfg.channels.iter().zip(&cfg.kernels).enumerate() {
            let fan_in = c_in * k;
            let w = store.insert_uniform(format!("{prefix}.conv{i}.w"), &[c, c_in, k], fan_in, rng)?;
            let b = store.insert_uniform(format!("{prefix}.conv{i}.b"), &[c], fan_in, rng)?;
            convs.push((w, b));
            c_in = c;
        }
        let proj_w = store.insert_uniform(format!("{prefix}.proj.w"), &[flat, out_dim], flat, rng)?;
        let proj_b = store.insert_uniform(format!("{prefix}.proj.b"), &[out_dim], flat, rng)?;
        Ok(Self {
            convs,
            proj_w,
            proj_b,
            window,
            flat,
            out_dim,
        })
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    /// Length-`L'` conv output width before the projection.
    pub fn flat_width(&self) -> usize {
        self.flat
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let rows = match *tape.shape(x) {
            [r, l] if l == self.window => r,
            ref s => {
                return Err(CoreError::Shape(format!(
                    "encoder expects rows of length {}, got {s:?}",
                    self.window
                )))
            }
        };
        let mut h = tape.reshape(x, &[rows, 1, self.window])?;
        for &(w, b) in &self.convs {
            let (w, b) = (tape.param(store, w), tape.param(store, b));
            let c = tape.conv1d(h, w, b, 0)?;
            h = tape.silu(c);
        }
        let flat = tape.reshape(h, &[rows, self.flat])?;
        let p = linear(tape, store, flat, self.proj_w, self.proj_b)?;
        Ok(tape.silu(p))
    }
}

/// Gated recurrent unit over scalar inputs.
///
/// ```text
/// z = sigmoid(x w_xz + h W_hz + b_z)
/// r = sigmoid(x w_xr + h W_hr + b_r)
/// n = tanh(x w_xn + (r * h) W_hn + b_n)
/// h' = (1 - z) * n + z * h
/// ```
#[derive(Debug, Clone)]
pub struct TemperatureGru {
    /// Update, reset, candidate.
    w_x: [ParamId; 3],
    w_h: [ParamId; 3],
    b: [ParamId; 3],
    /// Maps the context vector to the hidden width when they differ.
    init_proj: Option<(ParamId, ParamId)>,
    hidden: usize,
}

impl TemperatureGru {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        context_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut w_x = Vec::new();
        let mut w_h = Vec::new();
        let mut b = Vec::new();
        for gate in ["z", "r", "n"] {
            w_x.push(store.insert_uniform(format!("{prefix}.w_x{gate}"), &[1, hidden], hidden, rng)?);
            w_h.push(store.insert_uniform(format!("{prefix}.w_h{gate}"), &[hidden, hidden], hidden, rng)?);
            b.push(store.insert_uniform(format!("{prefix}.b_{gate}"), &[hidden], hidden, rng)?);
        }
        let init_proj = if context_dim == hidden {
            None
        } else {
            Some((
                store.insert_uniform(format!("{prefix}.init.w"), &[context_dim, hidden], context_dim, rng)?,
                store.insert_uniform(format!("{prefix}.init.b"), &[hidden], context_dim, rng)?,
            ))
        };
        let arr = |v: Vec<ParamId>| [v[0], v[1], v[2]];
        Ok(Self {
            w_x: arr(w_x),
            w_h: arr(w_h),
            b: arr(b),
            init_proj,
            hidden,
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// One recurrence step for `R` sequences. `x` is `R x 1`, `h` is
    /// `R x hidden`.
    pub fn cell(&self, tape: &mut Tape, store: &ParamStore, x: Var, h: Var) -> Result<Var> {
        let gate = |tape: &mut Tape, k: usize, h_in: Var| -> Result<Var> {
            let wx = tape.param(store, self.w_x[k]);
            let wh = tape.param(store, self.w_h[k]);
            let b = tape.param(store, self.b[k]);
            let xi = tape.matmul(x, wx)?;
            let hh = tape.matmul(h_in, wh)?;
            let s = tape.add(xi, hh)?;
            Ok(tape.add_bias(s, b)?)
        };
        let z = gate(tape, 0, h)?;
        let z = tape.sigmoid(z);
        let r = gate(tape, 1, h)?;
        let r = tape.sigmoid(r);
        let rh = tape.mul(r, h)?;
        let n = gate(tape, 2, rh)?;
        let n = tape.tanh(n);
        // (1 - z) * n + z * h == n + z * (h - n)
        let d = tape.sub(h, n)?;
        let zd = tape.mul(z, d)?;
        Ok(tape.add(n, zd)?)
    }

    /// Runs the recurrence over the columns of `x` (`R x L`) from the
    /// initial context `h0` (`R x context_dim`) and returns SiLU of the final
    /// state.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: &Tensor, h0: Var) -> Result<Var> {
        let (rows, len) = x.dims2("temperature gru")?;
        if !x.is_finite() {
            return Err(TensorError::NonFinite("temperature input").into());
        }
        let mut h = match self.init_proj {
            Some((w, b)) => linear(tape, store, h0, w, b)?,
            None => h0,
        };
        if tape.shape(h) != [rows, self.hidden] {
            return Err(CoreError::Shape(format!(
                "initial state {:?} does not match {rows} sequences of width {}",
                tape.shape(h),
                self.hidden
            )));
        }
        for t in 0..len {
            let col: Vec<f64> = (0..rows).map(|r| x.at2(r, t)).collect();
            let xt = tape.constant(Tensor::new(vec![rows, 1], col)?);
            h = self.cell(tape, store, xt, h)?;
        }
        Ok(tape.silu(h))
    }
}

/// Per-type node representations entering the interaction layers.
#[derive(Debug, Clone, Copy)]
pub struct NodeEmbeddings {
    /// `B*N_T x d_T`.
    pub h_t: Var,
    /// `B*N_V x (d_V + d_w)`.
    pub h_v: Var,
    /// `B x d_w`.
    pub h_w: Var,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DynamicsDims {
    pub speed: usize,
    pub temperature: usize,
    pub vibration: usize,
}

impl DynamicsDims {
    pub fn uniform(d: usize) -> Self {
        Self {
            speed: d,
            temperature: d,
            vibration: d,
        }
    }
}

/// Speed encoder, temperature GRU and vibration CNN.
#[derive(Debug, Clone)]
pub struct DynamicsEncoder {
    pub speed: CnnEncoder,
    pub temperature: TemperatureGru,
    pub vibration: CnnEncoder,
    dims: DynamicsDims,
}

impl DynamicsEncoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        conv: &ConvStackConfig,
        window: usize,
        dims: DynamicsDims,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.speed == 0 || dims.temperature == 0 || dims.vibration == 0 {
            return Err(CoreError::Config("embedding dimensions must be positive".into()));
        }
        let speed = CnnEncoder::new(store, "dynamics.speed_cnn", conv, window, dims.speed, rng)?;
        let temperature = TemperatureGru::new(store, "dynamics.temp_gru", dims.speed, dims.temperature, rng)?;
        let vibration = CnnEncoder::new(store, "dynamics.vib_cnn", conv, window, dims.vibration, rng)?;
        Ok(Self {
            speed,
            temperature,
            vibration,
            dims,
        })
    }

    pub fn dims(&self) -> DynamicsDims {
        self.dims
    }

    /// Width of temperature and vibration rows handed to the first
    /// interaction layer.
    pub fn output_widths(&self) -> (usize, usize) {
        (self.dims.temperature, self.dims.vibration + self.dims.speed)
    }

    pub fn encode_speed(&self, tape: &mut Tape, store: &ParamStore, w: Var) -> Result<Var> {
        self.speed.forward(tape, store, w)
    }

    pub fn encode_temperature(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x_t: &Tensor,
        h_w: Var,
        nodes_per_sample: usize,
    ) -> Result<Var> {
        let h0 = broadcast_context(tape, h_w, nodes_per_sample)?;
        self.temperature.forward(tape, store, x_t, h0)
    }

    pub fn encode_vibration(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x_v: Var,
        h_w: Var,
        nodes_per_sample: usize,
    ) -> Result<Var> {
        let hv = self.vibration.forward(tape, store, x_v)?;
        let ctx = broadcast_context(tape, h_w, nodes_per_sample)?;
        Ok(tape.concat_cols(hv, ctx)?)
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, batch: &Batch) -> Result<NodeEmbeddings> {
        let w = tape.constant(batch.w.clone());
        let h_w = self.encode_speed(tape, store, w)?;
        let h_t = self.encode_temperature(tape, store, &batch.x_t, h_w, batch.n_t)?;
        let x_v = tape.constant(batch.x_v.clone());
        let h_v = self.encode_vibration(tape, store, x_v, h_w, batch.n_v)?;
        Ok(NodeEmbeddings { h_t, h_v, h_w })
    }
}

/// Repeats row `b` of a `B x d` matrix `n` times, giving `B*n x d`.
fn broadcast_context(tape: &mut Tape, h_w: Var, n: usize) -> Result<Var> {
    let b = tape.shape(h_w)[0];
    let index: Arc<[usize]> = (0..b).flat_map(|s| std::iter::repeat_n(s, n)).collect();
    Ok(tape.gather_rows(h_w, index)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_stack_leaves_twenty_of_thirty() {
        let cfg = ConvStackConfig::default();
        assert_eq!(cfg.output_len(30).unwrap(), 20);
        assert_eq!(cfg.output_len(11).unwrap(), 1);
        assert!(cfg.output_len(10).is_err());
    }

    #[test]
    fn encoder_rejects_short_window() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = CnnEncoder::new(&mut store, "e", &ConvStackConfig::default(), 8, 4, &mut rng);
        assert!(matches!(
            err,
            Err(CoreError::Tensor(TensorError::WindowTooShort { .. }))
        ));
    }

    #[test]
    fn parameter_count_matches_registration() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = ConvStackConfig::default();
        CnnEncoder::new(&mut store, "e", &cfg, 30, 10, &mut rng).unwrap();
        assert_eq!(store.num_scalars(), cfg.parameter_count(30, 10).unwrap());
    }

    #[test]
    fn context_projection_only_when_widths_differ() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        TemperatureGru::new(&mut store, "g", 6, 6, &mut rng).unwrap();
        assert!(store.id("g.init.w").is_none());
        let mut store = ParamStore::new();
        let gru = TemperatureGru::new(&mut store, "g", 4, 6, &mut rng).unwrap();
        let mut tape = Tape::new();
        let h0 = tape.constant(Tensor::zeros(&[3, 4]));
        let x = Tensor::zeros(&[3, 5]);
        let h = gru.forward(&mut tape, &store, &x, h0).unwrap();
        assert_eq!(tape.shape(h), &[3, 6]);
    }

    #[test]
    fn non_finite_temperature_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let gru = TemperatureGru::new(&mut store, "g", 2, 2, &mut rng).unwrap();
        let mut tape = Tape::new();
        let h0 = tape.constant(Tensor::zeros(&[1, 2]));
        let x = Tensor::new(vec![1, 2], vec![0.0, f64::NAN]).unwrap();
        assert!(gru.forward(&mut tape, &store, &x, h0).is_err());
    }
}
