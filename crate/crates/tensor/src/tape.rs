//! Wengert-list reverse-mode differentiation.
//!
//! Every forward op appends one node holding its output value and the handles
//! of its inputs. Nodes are only ever appended, so the node order is already a
//! topological order and [`Tape::backward`] is a single reverse sweep.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Result, TensorError};
use crate::linalg::gemm;
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Per-channel batch mean and biased variance.
pub type ChannelStats = (Vec<f64>, Vec<f64>);

/// How a batch-norm node obtains its per-channel statistics.
#[derive(Debug, Clone)]
pub enum NormStats {
    /// Normalize with the statistics of the current batch.
    Batch { eps: f64 },
    /// Normalize with fixed (running) statistics.
    Fixed {
        mean: Vec<f64>,
        var: Vec<f64>,
        eps: f64,
    },
}

#[derive(Debug)]
enum Op {
    Constant,
    Param,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Silu(Var),
    Sigmoid(Var),
    Tanh(Var),
    LeakyRelu(Var, f64),
    Abs(Var),
    Sum(Var),
    Reshape(Var),
    ConcatCols(Var, Var),
    GatherRows(Var, Arc<[usize]>),
    ScatterAddRows(Var, Arc<[usize]>),
    ScaleRows(Var, Var),
    SegmentSoftmax(Var, Arc<[usize]>),
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        cols: Vec<f64>,
        geom: ConvGeom,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    batch: usize,
    c_in: usize,
    len: usize,
    c_out: usize,
    kernel: usize,
    padding: usize,
    len_out: usize,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records differentiable operations for one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Gradients of every parameter that was read on the tape. Parameters
    /// that do not reach the loss report zeros.
    pub fn param_grads(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.params
            .iter()
            .filter_map(|&(id, v)| self.grads[v.0].as_deref().map(|g| (id, g)))
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a value that is not differentiated.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Reads a parameter onto the tape. Repeated reads of the same parameter
    /// return the same handle.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).value.clone(), Op::Param, true);
        self.param_vars.insert(id, v);
        v
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let src = &self.nodes[x.0].value;
        let data = src.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(src.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(value, op, rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = ta.dims2("matmul")?;
        let (k2, n) = tb.dims2("matmul")?;
        if k != k2 {
            return Err(shape_err("matmul", ta, tb));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), false, tb.data(), false, &mut out, 0.0);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    /// Adds a length-`n` bias to every row of an `m x n` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let (_, n) = tx.dims2("add_bias")?;
        if tb.len() != n {
            return Err(shape_err("add_bias", tx, tb));
        }
        let mut out = tx.data().to_vec();
        for row in out.chunks_mut(n.max(1)) {
            add_into(row, tb.data());
        }
        let value = Tensor::new(tx.shape().to_vec(), out)?;
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(value, Op::AddBias(x, bias), rg))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, ta, tb));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * sigmoid(v), Op::Silu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.unary(
            x,
            |v| if v > 0.0 { v } else { slope * v },
            Op::LeakyRelu(x, slope),
        )
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, f64::abs, Op::Abs(x))
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1) as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape.to_vec())?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// `[a | b]` for `m x p` and `m x q` matrices.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, p) = ta.dims2("concat_cols")?;
        let (m2, q) = tb.dims2("concat_cols")?;
        if m != m2 {
            return Err(shape_err("concat_cols", ta, tb));
        }
        let mut out = Vec::with_capacity(m * (p + q));
        for i in 0..m {
            out.extend_from_slice(&ta.data()[i * p..(i + 1) * p]);
            out.extend_from_slice(&tb.data()[i * q..(i + 1) * q]);
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Tensor::new(vec![m, p + q], out)?,
            Op::ConcatCols(a, b),
            rg,
        ))
    }

    /// Row `e` of the output is row `index[e]` of `x`.
    pub fn gather_rows(&mut self, x: Var, index: Arc<[usize]>) -> Result<Var> {
        let tx = self.value(x);
        let (n, d) = tx.dims2("gather_rows")?;
        let mut out = Vec::with_capacity(index.len() * d);
        for &i in index.iter() {
            if i >= n {
                return Err(TensorError::IndexOutOfRange {
                    op: "gather_rows",
                    index: i,
                    bound: n,
                });
            }
            out.extend_from_slice(&tx.data()[i * d..(i + 1) * d]);
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(vec![index.len(), d], out)?,
            Op::GatherRows(x, index),
            rg,
        ))
    }

    /// Sums row `e` of `x` into output row `index[e]`; rows nobody targets
    /// stay zero.
    pub fn scatter_add_rows(&mut self, x: Var, index: Arc<[usize]>, rows: usize) -> Result<Var> {
        let tx = self.value(x);
        let (e, d) = tx.dims2("scatter_add_rows")?;
        if e != index.len() {
            return Err(TensorError::ShapeMismatch {
                op: "scatter_add_rows",
                lhs: tx.shape().to_vec(),
                rhs: vec![index.len()],
            });
        }
        let mut out = vec![0.0; rows * d];
        for (k, &i) in index.iter().enumerate() {
            if i >= rows {
                return Err(TensorError::IndexOutOfRange {
                    op: "scatter_add_rows",
                    index: i,
                    bound: rows,
                });
            }
            add_into(&mut out[i * d..(i + 1) * d], &tx.data()[k * d..(k + 1) * d]);
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(vec![rows, d], out)?,
            Op::ScatterAddRows(x, index),
            rg,
        ))
    }

    /// Multiplies row `e` of an `E x d` matrix by `s[e]`.
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let (tx, ts) = (self.value(x), self.value(s));
        let (e, d) = tx.dims2("scale_rows")?;
        if ts.len() != e {
            return Err(shape_err("scale_rows", tx, ts));
        }
        let mut out = tx.data().to_vec();
        for (row, &c) in out.chunks_mut(d.max(1)).zip(ts.data()) {
            row.iter_mut().for_each(|v| *v *= c);
        }
        let value = Tensor::new(tx.shape().to_vec(), out)?;
        let rg = self.rg(x) || self.rg(s);
        Ok(self.push(value, Op::ScaleRows(x, s), rg))
    }

    /// Softmax of `scores` taken separately over each group of entries that
    /// share a segment id. An empty score vector yields an empty result.
    pub fn segment_softmax(&mut self, scores: Var, segments: Arc<[usize]>) -> Result<Var> {
        let ts = self.value(scores);
        if ts.len() != segments.len() {
            return Err(TensorError::ShapeMismatch {
                op: "segment_softmax",
                lhs: ts.shape().to_vec(),
                rhs: vec![segments.len()],
            });
        }
        let n_seg = segments.iter().max().map_or(0, |&m| m + 1);
        let mut max = vec![f64::NEG_INFINITY; n_seg];
        for (&s, &v) in segments.iter().zip(ts.data()) {
            max[s] = max[s].max(v);
        }
        let mut out: Vec<f64> = segments
            .iter()
            .zip(ts.data())
            .map(|(&s, &v)| (v - max[s]).exp())
            .collect();
        let mut denom = vec![0.0; n_seg];
        for (&s, &v) in segments.iter().zip(&out) {
            denom[s] += v;
        }
        for (&s, v) in segments.iter().zip(out.iter_mut()) {
            *v /= denom[s];
        }
        let rg = self.rg(scores);
        Ok(self.push(
            Tensor::vector(out),
            Op::SegmentSoftmax(scores, segments),
            rg,
        ))
    }

    /// Stride-1 cross-correlation with symmetric zero padding.
    ///
    /// `x` is `[C_in, L]` or `[B, C_in, L]`, `w` is `[C_out, C_in, K]` and `b`
    /// is `[C_out]`. The output length is `L + 2 * padding - K + 1`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, padding: usize) -> Result<Var> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        let unbatched = tx.rank() == 2;
        let (batch, c_in, len) = match *tx.shape() {
            [c, l] => (1, c, l),
            [bs, c, l] => (bs, c, l),
            _ => {
                return Err(TensorError::Rank {
                    op: "conv1d",
                    expected: 3,
                    shape: tx.shape().to_vec(),
                })
            }
        };
        let (c_out, kernel) = match *tw.shape() {
            [co, ci, k] if ci == c_in => (co, k),
            _ => return Err(shape_err("conv1d", tx, tw)),
        };
        if tb.len() != c_out {
            return Err(shape_err("conv1d", tw, tb));
        }
        if kernel == 0 || kernel > len + 2 * padding {
            return Err(TensorError::WindowTooShort {
                len: len + 2 * padding,
                kernel,
            });
        }
        let geom = ConvGeom {
            batch,
            c_in,
            len,
            c_out,
            kernel,
            padding,
            len_out: len + 2 * padding - kernel + 1,
        };
        let cols = im2col(tx.data(), &geom);
        let rows = batch * geom.len_out;
        let ck = c_in * kernel;
        // [B*L_out, C_out] = cols [B*L_out, C_in*K] x W^T
        let mut prod = vec![0.0; rows * c_out];
        gemm(rows, ck, c_out, &cols, false, tw.data(), true, &mut prod, 0.0);
        let mut out = vec![0.0; batch * c_out * geom.len_out];
        for bi in 0..batch {
            for t in 0..geom.len_out {
                let src = &prod[(bi * geom.len_out + t) * c_out..][..c_out];
                for (co, &v) in src.iter().enumerate() {
                    out[(bi * c_out + co) * geom.len_out + t] = v + tb.data()[co];
                }
            }
        }
        let shape = if unbatched {
            vec![c_out, geom.len_out]
        } else {
            vec![batch, c_out, geom.len_out]
        };
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Conv1d {
                x,
                w,
                b,
                cols,
                geom,
            },
            rg,
        ))
    }

    /// Per-channel normalization of a `[B, C, L]` tensor followed by the
    /// affine map `gamma * xhat + beta`.
    ///
    /// Returns the output and, for [`NormStats::Batch`], the batch mean and
    /// biased variance per channel so callers can maintain running estimates.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &NormStats,
    ) -> Result<(Var, Option<ChannelStats>)> {
        let tx = self.value(x);
        let (batch, ch, len) = match *tx.shape() {
            [b, c, l] => (b, c, l),
            _ => {
                return Err(TensorError::Rank {
                    op: "batch_norm",
                    expected: 3,
                    shape: tx.shape().to_vec(),
                })
            }
        };
        let (tg, tbeta) = (self.value(gamma), self.value(beta));
        if tg.len() != ch || tbeta.len() != ch {
            return Err(shape_err("batch_norm", tx, tg));
        }
        let count = (batch * len) as f64;
        let (mean, var, eps, batch_stats) = match stats {
            NormStats::Batch { eps } => {
                let mut mean = vec![0.0; ch];
                let mut var = vec![0.0; ch];
                for bi in 0..batch {
                    for (c, m) in mean.iter_mut().enumerate() {
                        *m += tx.data()[(bi * ch + c) * len..][..len].iter().sum::<f64>();
                    }
                }
                mean.iter_mut().for_each(|m| *m /= count);
                for bi in 0..batch {
                    for (c, (v, m)) in var.iter_mut().zip(&mean).enumerate() {
                        let row = &tx.data()[(bi * ch + c) * len..][..len];
                        *v += row.iter().map(|x| (x - m).powi(2)).sum::<f64>();
                    }
                }
                var.iter_mut().for_each(|v| *v /= count);
                (mean, var, *eps, true)
            }
            NormStats::Fixed { mean, var, eps } => {
                if mean.len() != ch || var.len() != ch {
                    return Err(TensorError::ShapeMismatch {
                        op: "batch_norm",
                        lhs: vec![ch],
                        rhs: vec![mean.len(), var.len()],
                    });
                }
                (mean.clone(), var.clone(), *eps, false)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; tx.len()];
        let mut out = vec![0.0; tx.len()];
        for bi in 0..batch {
            for c in 0..ch {
                let off = (bi * ch + c) * len;
                for t in 0..len {
                    let h = (tx.data()[off + t] - mean[c]) * inv_std[c];
                    xhat[off + t] = h;
                    out[off + t] = tg.data()[c] * h + tbeta.data()[c];
                }
            }
        }
        let value = Tensor::new(tx.shape().to_vec(), out)?;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let v = self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
            rg,
        );
        Ok((v, batch_stats.then_some((mean, var))))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].requires_grad {
                self.backward_node(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        let mut params: Vec<(ParamId, Var)> =
            self.param_vars.iter().map(|(&id, &v)| (id, v)).collect();
        params.sort_by_key(|&(id, _)| id);
        for &(_, v) in &params {
            if grads[v.0].is_none() {
                grads[v.0] = Some(vec![0.0; self.value(v).len()]);
            }
        }
        Ok(Gradients { grads, params })
    }

    fn backward_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let mut acc = |v: Var, delta: &[f64]| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(buf) => add_into(buf, delta),
                slot => *slot = Some(delta.to_vec()),
            }
        };
        let val = |v: Var| self.nodes[v.0].value.data();
        match &node.op {
            Op::Constant | Op::Param => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2("matmul").unwrap();
                let n = self.value(*b).shape()[1];
                if self.rg(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g, false, val(*b), true, &mut da, 0.0);
                    acc(*a, &da);
                }
                if self.rg(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, val(*a), true, g, false, &mut db, 0.0);
                    acc(*b, &db);
                }
            }
            Op::AddBias(x, b) => {
                acc(*x, g);
                if self.rg(*b) {
                    let n = self.value(*b).len();
                    let mut db = vec![0.0; n];
                    for row in g.chunks(n.max(1)) {
                        add_into(&mut db, row);
                    }
                    acc(*b, &db);
                }
            }
            Op::Add(a, b) => {
                acc(*a, g);
                acc(*b, g);
            }
            Op::Sub(a, b) => {
                acc(*a, g);
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                acc(*b, &neg);
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    let d: Vec<f64> = g.iter().zip(val(*b)).map(|(g, y)| g * y).collect();
                    acc(*a, &d);
                }
                if self.rg(*b) {
                    let d: Vec<f64> = g.iter().zip(val(*a)).map(|(g, x)| g * x).collect();
                    acc(*b, &d);
                }
            }
            Op::Scale(x, c) => {
                let d: Vec<f64> = g.iter().map(|v| v * c).collect();
                acc(*x, &d);
            }
            Op::Silu(x) => {
                let d: Vec<f64> = g
                    .iter()
                    .zip(val(*x))
                    .map(|(g, &x)| {
                        let s = sigmoid(x);
                        g * s * (1.0 + x * (1.0 - s))
                    })
                    .collect();
                acc(*x, &d);
            }
            Op::Sigmoid(x) => {
                let d: Vec<f64> = g
                    .iter()
                    .zip(node.value.data())
                    .map(|(g, s)| g * s * (1.0 - s))
                    .collect();
                acc(*x, &d);
            }
            Op::Tanh(x) => {
                let d: Vec<f64> = g
                    .iter()
                    .zip(node.value.data())
                    .map(|(g, y)| g * (1.0 - y * y))
                    .collect();
                acc(*x, &d);
            }
            Op::LeakyRelu(x, slope) => {
                let d: Vec<f64> = g
                    .iter()
                    .zip(val(*x))
                    .map(|(g, &x)| if x > 0.0 { *g } else { g * slope })
                    .collect();
                acc(*x, &d);
            }
            Op::Abs(x) => {
                let d: Vec<f64> = g
                    .iter()
                    .zip(val(*x))
                    .map(|(g, &x)| {
                        if x > 0.0 {
                            *g
                        } else if x < 0.0 {
                            -g
                        } else {
                            0.0
                        }
                    })
                    .collect();
                acc(*x, &d);
            }
            Op::Sum(x) => {
                let d = vec![g[0]; self.value(*x).len()];
                acc(*x, &d);
            }
            Op::Reshape(x) => acc(*x, g),
            Op::ConcatCols(a, b) => {
                let p = self.value(*a).shape()[1];
                let q = self.value(*b).shape()[1];
                let m = node.value.shape()[0];
                let mut da = Vec::with_capacity(m * p);
                let mut db = Vec::with_capacity(m * q);
                for row in g.chunks((p + q).max(1)).take(m) {
                    da.extend_from_slice(&row[..p]);
                    db.extend_from_slice(&row[p..]);
                }
                acc(*a, &da);
                acc(*b, &db);
            }
            Op::GatherRows(x, index) => {
                let d = node.value.shape()[1];
                let mut dx = vec![0.0; self.value(*x).len()];
                for (k, &r) in index.iter().enumerate() {
                    add_into(&mut dx[r * d..(r + 1) * d], &g[k * d..(k + 1) * d]);
                }
                acc(*x, &dx);
            }
            Op::ScatterAddRows(x, index) => {
                let d = node.value.shape()[1];
                let mut dx = Vec::with_capacity(index.len() * d);
                for &r in index.iter() {
                    dx.extend_from_slice(&g[r * d..(r + 1) * d]);
                }
                acc(*x, &dx);
            }
            Op::ScaleRows(x, s) => {
                let d = node.value.shape()[1];
                let sv = val(*s);
                if self.rg(*x) {
                    let mut dx = g.to_vec();
                    for (row, &c) in dx.chunks_mut(d.max(1)).zip(sv) {
                        row.iter_mut().for_each(|v| *v *= c);
                    }
                    acc(*x, &dx);
                }
                if self.rg(*s) {
                    let xv = val(*x);
                    let ds: Vec<f64> = (0..sv.len())
                        .map(|e| {
                            g[e * d..(e + 1) * d]
                                .iter()
                                .zip(&xv[e * d..(e + 1) * d])
                                .map(|(a, b)| a * b)
                                .sum()
                        })
                        .collect();
                    acc(*s, &ds);
                }
            }
            Op::SegmentSoftmax(x, segments) => {
                let y = node.value.data();
                let n_seg = segments.iter().max().map_or(0, |&m| m + 1);
                let mut dot = vec![0.0; n_seg];
                for ((&s, gy), yy) in segments.iter().zip(g).zip(y) {
                    dot[s] += gy * yy;
                }
                let d: Vec<f64> = segments
                    .iter()
                    .zip(g)
                    .zip(y)
                    .map(|((&s, gy), yy)| yy * (gy - dot[s]))
                    .collect();
                acc(*x, &d);
            }
            Op::Conv1d {
                x,
                w,
                b,
                cols,
                geom,
            } => {
                let rows = geom.batch * geom.len_out;
                let ck = geom.c_in * geom.kernel;
                // Back to [B*L_out, C_out] layout.
                let mut gt = vec![0.0; rows * geom.c_out];
                for bi in 0..geom.batch {
                    for co in 0..geom.c_out {
                        let src = &g[(bi * geom.c_out + co) * geom.len_out..][..geom.len_out];
                        for (t, &v) in src.iter().enumerate() {
                            gt[(bi * geom.len_out + t) * geom.c_out + co] = v;
                        }
                    }
                }
                if self.rg(*b) {
                    let mut db = vec![0.0; geom.c_out];
                    for row in gt.chunks(geom.c_out) {
                        add_into(&mut db, row);
                    }
                    acc(*b, &db);
                }
                if self.rg(*w) {
                    let mut dw = vec![0.0; geom.c_out * ck];
                    gemm(geom.c_out, rows, ck, &gt, true, cols, false, &mut dw, 0.0);
                    acc(*w, &dw);
                }
                if self.rg(*x) {
                    let mut dcols = vec![0.0; rows * ck];
                    gemm(rows, geom.c_out, ck, &gt, false, val(*w), false, &mut dcols, 0.0);
                    acc(*x, &col2im(&dcols, geom));
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let [batch, ch, len] = *self.value(*x).shape() else {
                    unreachable!("batch_norm input is rank 3")
                };
                let gv = val(*gamma);
                let mut dgamma = vec![0.0; ch];
                let mut dbeta = vec![0.0; ch];
                for bi in 0..batch {
                    for c in 0..ch {
                        let off = (bi * ch + c) * len;
                        for t in 0..len {
                            dgamma[c] += g[off + t] * xhat[off + t];
                            dbeta[c] += g[off + t];
                        }
                    }
                }
                if self.rg(*x) {
                    let mut dx = vec![0.0; g.len()];
                    let count = (batch * len) as f64;
                    for bi in 0..batch {
                        for c in 0..ch {
                            let off = (bi * ch + c) * len;
                            for t in 0..len {
                                let dxhat = g[off + t] * gv[c];
                                dx[off + t] = if *batch_stats {
                                    // sum(dxhat) = gamma*dbeta, sum(dxhat*xhat) = gamma*dgamma
                                    inv_std[c] / count
                                        * (count * dxhat
                                            - gv[c] * dbeta[c]
                                            - xhat[off + t] * gv[c] * dgamma[c])
                                } else {
                                    dxhat * inv_std[c]
                                };
                            }
                        }
                    }
                    acc(*x, &dx);
                }
                acc(*gamma, &dgamma);
                acc(*beta, &dbeta);
            }
        }
    }
}

/// Unfolds `[B, C_in, L]` into `[B * L_out, C_in * K]` patches.
fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let ck = g.c_in * g.kernel;
    let mut cols = vec![0.0; g.batch * g.len_out * ck];
    for bi in 0..g.batch {
        for t in 0..g.len_out {
            let row = &mut cols[(bi * g.len_out + t) * ck..][..ck];
            for c in 0..g.c_in {
                let src = &x[(bi * g.c_in + c) * g.len..][..g.len];
                for k in 0..g.kernel {
                    let pos = t + k;
                    if pos >= g.padding && pos - g.padding < g.len {
                        row[c * g.kernel + k] = src[pos - g.padding];
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], g: &ConvGeom) -> Vec<f64> {
    let ck = g.c_in * g.kernel;
    let mut x = vec![0.0; g.batch * g.c_in * g.len];
    for bi in 0..g.batch {
        for t in 0..g.len_out {
            let row = &cols[(bi * g.len_out + t) * ck..][..ck];
            for c in 0..g.c_in {
                let dst = &mut x[(bi * g.c_in + c) * g.len..][..g.len];
                for k in 0..g.kernel {
                    let pos = t + k;
                    if pos >= g.padding && pos - g.padding < g.len {
                        dst[pos - g.padding] += row[c * g.kernel + k];
                    }
                }
            }
        }
    }
    x
}
