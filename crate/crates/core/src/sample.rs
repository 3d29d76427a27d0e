//! Model inputs: one sliding window of sensor data, and a stack of windows
//! laid out sample-major for batched evaluation.

use std::sync::Arc;

use htgnn_tensor::Tensor;

use crate::error::{CoreError, Result};
use crate::hetgraph::{HeteroGraph, MetaType, Relation};

/// One window of length `L` ending at the target timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    /// Temperature-rate rows, `N_T x L`, in graph node order.
    pub x_t: Tensor,
    /// Vibration RMS rows, `N_V x L`, in graph node order.
    pub x_v: Tensor,
    /// Rotational speed, length `L`.
    pub w: Tensor,
    /// `[F_x, F_y]` at the last second of the window.
    pub y: [f64; 2],
    pub case_id: usize,
    pub seen: bool,
}

impl WindowSample {
    pub fn window(&self) -> usize {
        self.w.len()
    }

    pub fn validate(&self, n_t: usize, n_v: usize, window: usize) -> Result<()> {
        let expect = |name: &str, t: &Tensor, shape: &[usize]| {
            if t.shape() == shape {
                Ok(())
            } else {
                Err(CoreError::Shape(format!(
                    "{name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )))
            }
        };
        expect("x_t", &self.x_t, &[n_t, window])?;
        expect("x_v", &self.x_v, &[n_v, window])?;
        expect("w", &self.w, &[window])?;
        let finite = self.x_t.is_finite()
            && self.x_v.is_finite()
            && self.w.is_finite()
            && self.y.iter().all(|v| v.is_finite());
        if !finite {
            return Err(CoreError::Tensor(htgnn_tensor::TensorError::NonFinite("window sample")));
        }
        Ok(())
    }
}

/// Several windows stacked along the row axis: sample `b`'s node `i` sits at
/// row `b * N + i`.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x_t: Tensor,
    pub x_v: Tensor,
    /// `B x L`.
    pub w: Tensor,
    /// `B x 2`.
    pub y: Tensor,
    pub n_t: usize,
    pub n_v: usize,
}

impl Batch {
    pub fn from_samples<S: AsRef<WindowSample>>(samples: &[S]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| CoreError::Shape("empty batch".into()))?
            .as_ref();
        let n_t = first.x_t.shape()[0];
        let n_v = first.x_v.shape()[0];
        let window = first.window();
        let b = samples.len();
        let mut x_t = Vec::with_capacity(b * n_t * window);
        let mut x_v = Vec::with_capacity(b * n_v * window);
        let mut w = Vec::with_capacity(b * window);
        let mut y = Vec::with_capacity(b * 2);
        for s in samples {
            let s = s.as_ref();
            s.validate(n_t, n_v, window)?;
            x_t.extend_from_slice(s.x_t.data());
            x_v.extend_from_slice(s.x_v.data());
            w.extend_from_slice(s.w.data());
            y.extend_from_slice(&s.y);
        }
        Ok(Self {
            x_t: Tensor::new(vec![b * n_t, window], x_t)?,
            x_v: Tensor::new(vec![b * n_v, window], x_v)?,
            w: Tensor::new(vec![b, window], w)?,
            y: Tensor::new(vec![b, 2], y)?,
            n_t,
            n_v,
        })
    }

    pub fn len(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn window(&self) -> usize {
        self.w.shape()[1]
    }
}

impl AsRef<WindowSample> for WindowSample {
    fn as_ref(&self) -> &WindowSample {
        self
    }
}

/// Edge list of one relation replicated over a batch, with node indices
/// offset into the stacked rows.
#[derive(Debug, Clone)]
pub struct BatchedEdges {
    pub src: Arc<[usize]>,
    pub dst: Arc<[usize]>,
    /// Per-edge `1/sqrt(d_i d_j)` for same-type relations.
    pub norm: Option<Tensor>,
}

/// A graph's edges replicated for a batch of `B` disjoint copies.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    pub batch: usize,
    pub n_t: usize,
    pub n_v: usize,
    edges: [BatchedEdges; 4],
}

impl GraphBatch {
    pub fn new(graph: &HeteroGraph, batch: usize) -> Result<Self> {
        let n_t = graph.node_count(MetaType::T);
        let n_v = graph.node_count(MetaType::V);
        let count = |m: MetaType| if m == MetaType::T { n_t } else { n_v };
        let build = |rel: Relation| -> Result<BatchedEdges> {
            let edges = graph.edges(rel);
            let (ns, nd) = (count(rel.source()), count(rel.target()));
            let mut src = Vec::with_capacity(edges.len() * batch);
            let mut dst = Vec::with_capacity(edges.len() * batch);
            for b in 0..batch {
                for &(s, d) in edges {
                    src.push(b * ns + s);
                    dst.push(b * nd + d);
                }
            }
            let norm = if rel.is_same_type() {
                let table = graph.degree_normalizers(rel)?;
                let per: Vec<f64> = edges.iter().map(|&(s, d)| table.normalizer(d, s)).collect();
                Some(Tensor::vector(per.repeat(batch)))
            } else {
                None
            };
            Ok(BatchedEdges {
                src: src.into(),
                dst: dst.into(),
                norm,
            })
        };
        let edges = [
            build(Relation::TT)?,
            build(Relation::VV)?,
            build(Relation::TV)?,
            build(Relation::VT)?,
        ];
        Ok(Self {
            batch,
            n_t: n_t * batch,
            n_v: n_v * batch,
            edges,
        })
    }

    pub fn edges(&self, rel: Relation) -> &BatchedEdges {
        &self.edges[rel.index()]
    }

    /// Stacked row count of a node type.
    pub fn rows(&self, meta: MetaType) -> usize {
        match meta {
            MetaType::T => self.n_t,
            MetaType::V => self.n_v,
        }
    }
}
