//! Relation-wise message passing between temperature and vibration nodes.
//!
//! Same-type relations (T-T, V-V) use symmetric degree-normalized
//! convolution. Cross-type relations (T-V, V-T) weight each message by a
//! single-head GATv2 score normalized over the target's incoming edges.
//! Every relation's messages are summed at the target and passed through
//! SiLU.

use htgnn_tensor::{ParamId, ParamStore, Tape, Tensor, Var};
use rand::Rng;

use crate::error::{CoreError, Result};
use crate::hetgraph::{MetaType, Relation};
use crate::sample::GraphBatch;

pub const ATTENTION_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy)]
struct Attention {
    w: ParamId,
    a: ParamId,
}

/// One message-passing layer: a message weight per relation plus attention
/// parameters for the two cross-type relations. No biases.
#[derive(Debug, Clone)]
pub struct HeteroLayer {
    w_msg: [ParamId; 4],
    attention: [Option<Attention>; 4],
    in_dims: (usize, usize),
    hidden: usize,
}

fn width(meta: MetaType, dims: (usize, usize)) -> usize {
    match meta {
        MetaType::T => dims.0,
        MetaType::V => dims.1,
    }
}

fn rel_key(rel: Relation) -> &'static str {
    match rel {
        Relation::TT => "tt",
        Relation::VV => "vv",
        Relation::TV => "tv",
        Relation::VT => "vt",
    }
}

impl HeteroLayer {
    /// `in_dims` are the (temperature, vibration) row widths entering the
    /// layer.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        in_dims: (usize, usize),
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if in_dims.0 == 0 || in_dims.1 == 0 || hidden == 0 {
            return Err(CoreError::Config("layer widths must be positive".into()));
        }
        let mut w_msg = Vec::new();
        let mut attention = [None; 4];
        for rel in Relation::ALL {
            let key = rel_key(rel);
            let d_src = width(rel.source(), in_dims);
            w_msg.push(store.insert_uniform(format!("{prefix}.{key}.w_msg"), &[d_src, hidden], d_src, rng)?);
            if !rel.is_same_type() {
                let cat = width(rel.target(), in_dims) + d_src;
                let w = store.insert_uniform(format!("{prefix}.{key}.w_att"), &[cat, hidden], cat, rng)?;
                let a = store.insert_uniform(format!("{prefix}.{key}.a"), &[hidden, 1], hidden, rng)?;
                attention[rel.index()] = Some(Attention { w, a });
            }
        }
        Ok(Self {
            w_msg: [w_msg[0], w_msg[1], w_msg[2], w_msg[3]],
            attention,
            in_dims,
            hidden,
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn in_dims(&self) -> (usize, usize) {
        self.in_dims
    }

    pub fn parameter_count(in_dims: (usize, usize), hidden: usize) -> usize {
        Relation::ALL
            .into_iter()
            .map(|rel| {
                let d_src = width(rel.source(), in_dims);
                let att = if rel.is_same_type() {
                    0
                } else {
                    (width(rel.target(), in_dims) + d_src) * hidden + hidden
                };
                d_src * hidden + att
            })
            .sum()
    }

    fn project(&self, tape: &mut Tape, store: &ParamStore, rel: Relation, h_src: Var) -> Result<Var> {
        let w = tape.param(store, self.w_msg[rel.index()]);
        Ok(tape.matmul(h_src, w)?)
    }

    /// Per-edge `W h_j / sqrt(d_i d_j)` for a same-type relation, self-loops
    /// included. Rows follow the batched edge order.
    pub fn same_type_messages(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        graph: &GraphBatch,
        rel: Relation,
        h: Var,
    ) -> Result<Var> {
        if !rel.is_same_type() {
            return Err(CoreError::NotSameType(rel));
        }
        let edges = graph.edges(rel);
        let norm = edges
            .norm
            .clone()
            .ok_or_else(|| CoreError::InvalidGraph(format!("{rel} has no degree table")))?;
        let hw = self.project(tape, store, rel, h)?;
        let per_edge = tape.gather_rows(hw, edges.src.clone())?;
        let norm = tape.constant(norm);
        Ok(tape.scale_rows(per_edge, norm)?)
    }

    /// Per-edge attention weights of a cross-type relation, normalized over
    /// each target's incoming edges.
    pub fn attention_coefficients(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        graph: &GraphBatch,
        rel: Relation,
        h_dst: Var,
        h_src: Var,
    ) -> Result<Var> {
        let att = self.attention[rel.index()].ok_or(CoreError::NotCrossType(rel))?;
        let edges = graph.edges(rel);
        let hi = tape.gather_rows(h_dst, edges.dst.clone())?;
        let hj = tape.gather_rows(h_src, edges.src.clone())?;
        let cat = tape.concat_cols(hi, hj)?;
        let w = tape.param(store, att.w);
        let a = tape.param(store, att.a);
        let proj = tape.matmul(cat, w)?;
        let act = tape.leaky_relu(proj, ATTENTION_SLOPE);
        let scores = tape.matmul(act, a)?;
        let scores = tape.reshape(scores, &[edges.dst.len()])?;
        Ok(tape.segment_softmax(scores, edges.dst.clone())?)
    }

    /// Per-edge `alpha * W h_j` for a cross-type relation.
    pub fn cross_type_messages(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        graph: &GraphBatch,
        rel: Relation,
        alpha: Var,
        h_src: Var,
    ) -> Result<Var> {
        if rel.is_same_type() {
            return Err(CoreError::NotCrossType(rel));
        }
        let edges = graph.edges(rel);
        if tape.value(alpha).len() != edges.src.len() {
            return Err(CoreError::Shape(format!(
                "{rel}: {} attention weights for {} edges",
                tape.value(alpha).len(),
                edges.src.len()
            )));
        }
        let hw = self.project(tape, store, rel, h_src)?;
        let per_edge = tape.gather_rows(hw, edges.src.clone())?;
        Ok(tape.scale_rows(per_edge, alpha)?)
    }

    /// Full layer: messages of all four relations, summed per target, SiLU.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        graph: &GraphBatch,
        h_t: Var,
        h_v: Var,
    ) -> Result<(Var, Var)> {
        for (meta, h) in [(MetaType::T, h_t), (MetaType::V, h_v)] {
            let expect = [graph.rows(meta), width(meta, self.in_dims)];
            if tape.shape(h) != expect {
                return Err(CoreError::Shape(format!(
                    "{meta:?} representations {:?}, layer expects {expect:?}",
                    tape.shape(h)
                )));
            }
        }
        let pick = |m: MetaType| if m == MetaType::T { h_t } else { h_v };
        let mut messages = Vec::with_capacity(4);
        for rel in Relation::ALL {
            if graph.edges(rel).src.is_empty() {
                continue;
            }
            let m = if rel.is_same_type() {
                self.same_type_messages(tape, store, graph, rel, pick(rel.source()))?
            } else {
                let alpha =
                    self.attention_coefficients(tape, store, graph, rel, pick(rel.target()), pick(rel.source()))?;
                self.cross_type_messages(tape, store, graph, rel, alpha, pick(rel.source()))?
            };
            messages.push((rel, m));
        }
        aggregate_update(tape, graph, &messages)
    }
}

/// Sums per-edge messages into their targets across relations and applies
/// SiLU. Targets with no incoming message get `SiLU(0) = 0`.
pub fn aggregate_update(tape: &mut Tape, graph: &GraphBatch, messages: &[(Relation, Var)]) -> Result<(Var, Var)> {
    let widths: Vec<usize> = messages.iter().map(|&(_, m)| tape.shape(m)[1]).collect();
    let w = match widths.first() {
        Some(&w) if widths.iter().all(|&x| x == w) => w,
        Some(_) => return Err(CoreError::Shape(format!("message widths differ across relations: {widths:?}"))),
        None => return Err(CoreError::InvalidGraph("no messages to aggregate".into())),
    };
    let mut sums: [Option<Var>; 2] = [None, None];
    for &(rel, m) in messages {
        let edges = graph.edges(rel);
        let target = rel.target();
        let agg = tape.scatter_add_rows(m, edges.dst.clone(), graph.rows(target))?;
        let slot = &mut sums[target as usize];
        *slot = Some(match *slot {
            Some(acc) => tape.add(acc, agg)?,
            None => agg,
        });
    }
    let mut finish = |meta: MetaType| -> Var {
        let s = sums[meta as usize].unwrap_or_else(|| tape.constant(Tensor::zeros(&[graph.rows(meta), w])));
        tape.silu(s)
    };
    let h_t = finish(MetaType::T);
    let h_v = finish(MetaType::V);
    Ok((h_t, h_v))
}

/// `n_layers` message-passing layers; the first consumes the encoder widths,
/// the rest the shared hidden width.
#[derive(Debug, Clone)]
pub struct InteractionStack {
    layers: Vec<HeteroLayer>,
}

impl InteractionStack {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        n_layers: usize,
        in_dims: (usize, usize),
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if n_layers < 1 {
            return Err(CoreError::Config("at least one interaction layer is required".into()));
        }
        let mut layers = Vec::with_capacity(n_layers);
        let mut dims = in_dims;
        for l in 0..n_layers {
            layers.push(HeteroLayer::new(store, &format!("interaction.layer{l}"), dims, hidden, rng)?);
            dims = (hidden, hidden);
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[HeteroLayer] {
        &self.layers
    }

    pub fn parameter_count(n_layers: usize, in_dims: (usize, usize), hidden: usize) -> usize {
        (0..n_layers)
            .map(|l| HeteroLayer::parameter_count(if l == 0 { in_dims } else { (hidden, hidden) }, hidden))
            .sum()
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        graph: &GraphBatch,
        mut h_t: Var,
        mut h_v: Var,
    ) -> Result<(Var, Var)> {
        for layer in &self.layers {
            (h_t, h_v) = layer.forward(tape, store, graph, h_t, h_v)?;
        }
        Ok((h_t, h_v))
    }
}
