//! Typed sensor graph: temperature (T) and vibration (V) nodes joined by four
//! relations. T-T and V-V are undirected and carry self-loops; T-V and V-T are
//! directed.
//!
//! The graph is static over a window. Node order inside each type is fixed at
//! construction and is the order the prediction head flattens in.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Angular distance under which a temperature and a vibration sensor on the
/// same bearing count as co-located.
pub const COLOCATION_TOLERANCE_DEG: f64 = 22.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MetaType {
    T,
    V,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SubType {
    #[serde(rename = "T_OR")]
    TOr,
    #[serde(rename = "T_IR")]
    TIr,
    #[serde(rename = "V_AX")]
    VAx,
    #[serde(rename = "V_RA")]
    VRa,
}

impl SubType {
    pub fn meta(self) -> MetaType {
        match self {
            SubType::TOr | SubType::TIr => MetaType::T,
            SubType::VAx | SubType::VRa => MetaType::V,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SubType::TOr => "T_OR",
            SubType::TIr => "T_IR",
            SubType::VAx => "V_AX",
            SubType::VRa => "V_RA",
        }
    }
}

impl FromStr for SubType {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "T_OR" => Ok(SubType::TOr),
            "T_IR" => Ok(SubType::TIr),
            "V_AX" => Ok(SubType::VAx),
            "V_RA" => Ok(SubType::VRa),
            other => Err(CoreError::InvalidLayout(format!("unknown subtype {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorNode {
    pub id: String,
    pub subtype: SubType,
    pub bearing: u8,
    pub angle_deg: f64,
}

impl SensorNode {
    pub fn new(id: impl Into<String>, subtype: SubType, bearing: u8, angle_deg: f64) -> Self {
        Self {
            id: id.into(),
            subtype,
            bearing,
            angle_deg,
        }
    }

    pub fn meta(&self) -> MetaType {
        self.subtype.meta()
    }

    /// Canonical flatten key: bearing, then OR before IR (AX before RA),
    /// then ascending angle.
    fn order_key(&self) -> (u8, SubType, i64) {
        (self.bearing, self.subtype, (self.angle_deg * 1e6).round() as i64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "T-T")]
    TT,
    #[serde(rename = "V-V")]
    VV,
    #[serde(rename = "T-V")]
    TV,
    #[serde(rename = "V-T")]
    VT,
}

impl Relation {
    pub const ALL: [Relation; 4] = [Relation::TT, Relation::VV, Relation::TV, Relation::VT];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Relation::TT => "T-T",
            Relation::VV => "V-V",
            Relation::TV => "T-V",
            Relation::VT => "V-T",
        }
    }

    pub fn source(self) -> MetaType {
        match self {
            Relation::TT | Relation::TV => MetaType::T,
            Relation::VV | Relation::VT => MetaType::V,
        }
    }

    pub fn target(self) -> MetaType {
        match self {
            Relation::TT | Relation::VT => MetaType::T,
            Relation::VV | Relation::TV => MetaType::V,
        }
    }

    pub fn directed(self) -> bool {
        !self.is_same_type()
    }

    pub fn is_same_type(self) -> bool {
        self.source() == self.target()
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Relation {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        Relation::ALL
            .into_iter()
            .find(|r| r.name() == s.trim())
            .ok_or_else(|| CoreError::UnknownRelation(s.to_string()))
    }
}

/// Physical placement of every sensor on the rig.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigLayout {
    pub sensors: Vec<SensorNode>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LayoutRow {
    sensor_id: String,
    meta: String,
    subtype: String,
    bearing: u8,
    angle_deg: f64,
}

impl RigLayout {
    /// Two face-to-face bearings. Per bearing: eight outer-ring temperature
    /// sensors every 45 degrees, two inner-ring temperature sensors at 90 and
    /// 270 degrees, axial vibration at 0/90/180/270 and radial vibration at
    /// the top (0) and bottom (180) of the housing.
    pub fn default_two_bearing() -> Self {
        let mut sensors = Vec::new();
        for bearing in 1..=2u8 {
            for k in 0..8 {
                let a = 45.0 * k as f64;
                sensors.push(SensorNode::new(format!("B{bearing}_TOR_{a:03}"), SubType::TOr, bearing, a));
            }
            for a in [90.0, 270.0] {
                sensors.push(SensorNode::new(format!("B{bearing}_TIR_{a:03}"), SubType::TIr, bearing, a));
            }
            for a in [0.0, 90.0, 180.0, 270.0] {
                sensors.push(SensorNode::new(format!("B{bearing}_VAX_{a:03}"), SubType::VAx, bearing, a));
            }
            for a in [0.0, 180.0] {
                sensors.push(SensorNode::new(format!("B{bearing}_VRA_{a:03}"), SubType::VRa, bearing, a));
            }
        }
        Self { sensors }
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for s in &self.sensors {
            if !ids.insert(s.id.as_str()) {
                return Err(CoreError::InvalidLayout(format!("duplicate sensor id {:?}", s.id)));
            }
            if !(0.0..360.0).contains(&s.angle_deg) {
                return Err(CoreError::InvalidLayout(format!(
                    "{}: angle {} outside [0, 360)",
                    s.id, s.angle_deg
                )));
            }
            if s.bearing == 0 {
                return Err(CoreError::InvalidLayout(format!("{}: bearings are numbered from 1", s.id)));
            }
        }
        for meta in [MetaType::T, MetaType::V] {
            if !self.sensors.iter().any(|s| s.meta() == meta) {
                return Err(CoreError::InvalidLayout(format!("no {meta:?} sensors")));
            }
        }
        Ok(())
    }

    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut sensors = Vec::new();
        for row in csv::Reader::from_reader(reader).deserialize() {
            let row: LayoutRow = row?;
            let subtype: SubType = row.subtype.parse()?;
            let meta = match row.meta.trim() {
                "T" => MetaType::T,
                "V" => MetaType::V,
                m => return Err(CoreError::InvalidLayout(format!("unknown meta type {m:?}"))),
            };
            if subtype.meta() != meta {
                return Err(CoreError::InvalidLayout(format!(
                    "{}: subtype {} is not a {meta:?} subtype",
                    row.sensor_id,
                    subtype.as_str()
                )));
            }
            sensors.push(SensorNode::new(row.sensor_id, subtype, row.bearing, row.angle_deg));
        }
        let layout = Self { sensors };
        layout.validate()?;
        Ok(layout)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for s in &self.sensors {
            w.serialize(LayoutRow {
                sensor_id: s.id.clone(),
                meta: format!("{:?}", s.meta()),
                subtype: s.subtype.as_str().to_string(),
                bearing: s.bearing,
                angle_deg: s.angle_deg,
            })?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Sensors of one meta type in canonical flatten order.
    pub fn ordered(&self, meta: MetaType) -> Vec<SensorNode> {
        let mut v: Vec<SensorNode> = self.sensors.iter().filter(|s| s.meta() == meta).cloned().collect();
        v.sort_by_key(SensorNode::order_key);
        v
    }
}

fn angular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

/// Per-node normalized degree `1 + #non-self neighbors` under one same-type
/// relation.
#[derive(Debug, Clone, PartialEq)]
pub struct DegreeTable {
    pub relation: Relation,
    pub degrees: Vec<f64>,
}

impl DegreeTable {
    /// `1 / sqrt(d_i * d_j)`.
    pub fn normalizer(&self, i: usize, j: usize) -> f64 {
        1.0 / (self.degrees[i] * self.degrees[j]).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeteroGraph {
    t_nodes: Vec<SensorNode>,
    v_nodes: Vec<SensorNode>,
    /// Indexed by [`Relation::index`]; `(source, target)` pairs sorted by
    /// `(target, source)`.
    edges: [Vec<(usize, usize)>; 4],
}

impl HeteroGraph {
    /// Assembles a graph from explicit node lists and edges. Undirected
    /// relations are symmetrized and given self-loops; every edge is checked
    /// against its relation's type signature.
    pub fn new(
        t_nodes: Vec<SensorNode>,
        v_nodes: Vec<SensorNode>,
        edges: impl IntoIterator<Item = (Relation, usize, usize)>,
    ) -> Result<Self> {
        if t_nodes.is_empty() || v_nodes.is_empty() {
            return Err(CoreError::InvalidGraph("both node types need at least one node".into()));
        }
        for (meta, nodes) in [(MetaType::T, &t_nodes), (MetaType::V, &v_nodes)] {
            if let Some(n) = nodes.iter().find(|n| n.meta() != meta) {
                return Err(CoreError::InvalidGraph(format!("{} listed under {meta:?} nodes", n.id)));
            }
        }
        let count = |m: MetaType| if m == MetaType::T { t_nodes.len() } else { v_nodes.len() };
        let mut sets: [BTreeSet<(usize, usize)>; 4] = Default::default();
        for (rel, src, dst) in edges {
            if src >= count(rel.source()) || dst >= count(rel.target()) {
                return Err(CoreError::InvalidGraph(format!(
                    "{rel} edge ({src}, {dst}) references a missing node"
                )));
            }
            // stored as (target, source) so iteration order is by target
            sets[rel.index()].insert((dst, src));
            if rel.is_same_type() {
                sets[rel.index()].insert((src, dst));
            }
        }
        for rel in [Relation::TT, Relation::VV] {
            for i in 0..count(rel.source()) {
                sets[rel.index()].insert((i, i));
            }
        }
        let edges = sets.map(|s| s.into_iter().map(|(d, s)| (s, d)).collect());
        Ok(Self {
            t_nodes,
            v_nodes,
            edges,
        })
    }

    /// Proximity-rule topology over a rig layout:
    /// - outer-ring temperature sensors form a ring per bearing
    /// - inner-ring temperature sensors form one clique across all bearings
    /// - each inner-ring sensor links to the angularly nearest outer-ring
    ///   sensors of its bearing
    /// - vibration sensors form a ring per bearing (ordered by angle, axial
    ///   first) and link to the facing sensor of the same subtype on other
    ///   bearings
    /// - co-located T/V pairs on one bearing get a T-V and a V-T edge
    /// - self-loops on T-T and V-V
    pub fn build_bearing_graph(layout: &RigLayout) -> Result<Self> {
        layout.validate()?;
        let t_nodes = layout.ordered(MetaType::T);
        let v_nodes = layout.ordered(MetaType::V);
        let mut edges = Vec::new();

        let bearings: BTreeSet<u8> = layout.sensors.iter().map(|s| s.bearing).collect();
        let ring = |idx: &mut Vec<usize>, nodes: &[SensorNode], edges: &mut Vec<(Relation, usize, usize)>, rel| {
            idx.sort_by(|&a, &b| {
                nodes[a]
                    .angle_deg
                    .total_cmp(&nodes[b].angle_deg)
                    .then(nodes[a].subtype.cmp(&nodes[b].subtype))
            });
            match idx.len() {
                0 | 1 => {}
                2 => edges.push((rel, idx[0], idx[1])),
                n => (0..n).for_each(|k| edges.push((rel, idx[k], idx[(k + 1) % n]))),
            }
        };

        for &b in &bearings {
            let mut or: Vec<usize> = (0..t_nodes.len())
                .filter(|&i| t_nodes[i].bearing == b && t_nodes[i].subtype == SubType::TOr)
                .collect();
            ring(&mut or, &t_nodes, &mut edges, Relation::TT);

            for (i, ir) in t_nodes.iter().enumerate() {
                if ir.bearing != b || ir.subtype != SubType::TIr || or.is_empty() {
                    continue;
                }
                let best = or
                    .iter()
                    .map(|&j| angular_distance(ir.angle_deg, t_nodes[j].angle_deg))
                    .fold(f64::INFINITY, f64::min);
                for &j in &or {
                    if angular_distance(ir.angle_deg, t_nodes[j].angle_deg) <= best + 1e-9 {
                        edges.push((Relation::TT, i, j));
                    }
                }
            }

            let mut vs: Vec<usize> = (0..v_nodes.len()).filter(|&i| v_nodes[i].bearing == b).collect();
            ring(&mut vs, &v_nodes, &mut edges, Relation::VV);
        }

        let ir: Vec<usize> = (0..t_nodes.len()).filter(|&i| t_nodes[i].subtype == SubType::TIr).collect();
        for (k, &i) in ir.iter().enumerate() {
            for &j in &ir[k + 1..] {
                edges.push((Relation::TT, i, j));
            }
        }

        for (i, a) in v_nodes.iter().enumerate() {
            for (j, b) in v_nodes.iter().enumerate().skip(i + 1) {
                if a.bearing != b.bearing
                    && a.subtype == b.subtype
                    && angular_distance(a.angle_deg, b.angle_deg) < 1e-9
                {
                    edges.push((Relation::VV, i, j));
                }
            }
        }

        for (ti, t) in t_nodes.iter().enumerate() {
            for (vi, v) in v_nodes.iter().enumerate() {
                if t.bearing == v.bearing
                    && angular_distance(t.angle_deg, v.angle_deg) < COLOCATION_TOLERANCE_DEG
                {
                    edges.push((Relation::TV, ti, vi));
                    edges.push((Relation::VT, vi, ti));
                }
            }
        }

        Self::new(t_nodes, v_nodes, edges)
    }

    /// Replaces the proximity topology with an explicit edge list
    /// (`relation,src_id,dst_id` CSV) over the layout's canonical node order.
    pub fn from_edge_csv<R: Read>(layout: &RigLayout, reader: R) -> Result<Self> {
        layout.validate()?;
        let t_nodes = layout.ordered(MetaType::T);
        let v_nodes = layout.ordered(MetaType::V);
        let index: HashMap<&str, (MetaType, usize)> = t_nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id.as_str(), (MetaType::T, i)))
            .chain(v_nodes.iter().enumerate().map(|(i, n)| (n.id.as_str(), (MetaType::V, i))))
            .collect();
        let mut edges = Vec::new();
        let mut rdr = csv::Reader::from_reader(reader);
        for rec in rdr.records() {
            let rec = rec?;
            let field = |k: usize| rec.get(k).unwrap_or("").trim().to_string();
            let rel: Relation = field(0).parse()?;
            let lookup = |id: String, want: MetaType| -> Result<usize> {
                match index.get(id.as_str()) {
                    Some(&(m, i)) if m == want => Ok(i),
                    Some(_) => Err(CoreError::InvalidGraph(format!("{id} has the wrong type for {rel}"))),
                    None => Err(CoreError::InvalidGraph(format!("unknown sensor id {id:?}"))),
                }
            };
            let src = lookup(field(1), rel.source())?;
            let dst = lookup(field(2), rel.target())?;
            edges.push((rel, src, dst));
        }
        Self::new(t_nodes, v_nodes, edges)
    }

    pub fn write_edge_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["relation", "src_id", "dst_id"])?;
        for rel in Relation::ALL {
            for &(s, d) in self.edges(rel) {
                w.write_record([
                    rel.name(),
                    &self.nodes(rel.source())[s].id,
                    &self.nodes(rel.target())[d].id,
                ])?;
            }
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn nodes(&self, meta: MetaType) -> &[SensorNode] {
        match meta {
            MetaType::T => &self.t_nodes,
            MetaType::V => &self.v_nodes,
        }
    }

    pub fn node_count(&self, meta: MetaType) -> usize {
        self.nodes(meta).len()
    }

    pub fn edges(&self, rel: Relation) -> &[(usize, usize)] {
        &self.edges[rel.index()]
    }

    pub fn node_type_count(&self) -> usize {
        2
    }

    pub fn relation_type_count(&self) -> usize {
        self.edges.iter().filter(|e| !e.is_empty()).count()
    }

    /// `|A| + |R| > 2`.
    pub fn is_heterogeneous(&self) -> bool {
        self.node_type_count() + self.relation_type_count() > 2
    }

    /// Sensor ids in flatten order: temperature nodes, then vibration nodes.
    pub fn node_order(&self) -> Vec<String> {
        self.t_nodes.iter().chain(&self.v_nodes).map(|n| n.id.clone()).collect()
    }

    /// Sources with an edge into `target` under `rel`, ascending.
    pub fn neighbors(&self, rel: Relation, target: usize) -> Result<Vec<usize>> {
        let count = self.node_count(rel.target());
        if target >= count {
            return Err(CoreError::NodeOutOfRange {
                relation: rel,
                index: target,
                count,
            });
        }
        Ok(self
            .edges(rel)
            .iter()
            .filter(|&&(_, d)| d == target)
            .map(|&(s, _)| s)
            .collect())
    }

    pub fn degree_normalizers(&self, rel: Relation) -> Result<DegreeTable> {
        if !rel.is_same_type() {
            return Err(CoreError::NotSameType(rel));
        }
        let mut degrees = vec![1.0; self.node_count(rel.target())];
        for &(s, d) in self.edges(rel) {
            if s != d {
                degrees[d] += 1.0;
            }
        }
        Ok(DegreeTable { relation: rel, degrees })
    }

    /// The same graph with node `i` of each type moved to position
    /// `perm[i]`.
    pub fn relabel(&self, t_perm: &[usize], v_perm: &[usize]) -> Result<Self> {
        let check = |perm: &[usize], n: usize| {
            let set: BTreeSet<_> = perm.iter().copied().collect();
            perm.len() == n && set.len() == n && set.iter().all(|&p| p < n)
        };
        if !check(t_perm, self.t_nodes.len()) || !check(v_perm, self.v_nodes.len()) {
            return Err(CoreError::InvalidGraph("relabel needs a permutation of each node type".into()));
        }
        let place = |nodes: &[SensorNode], perm: &[usize]| {
            let mut out = nodes.to_vec();
            for (i, n) in nodes.iter().enumerate() {
                out[perm[i]] = n.clone();
            }
            out
        };
        let map = |m: MetaType, i: usize| if m == MetaType::T { t_perm[i] } else { v_perm[i] };
        let edges = Relation::ALL.into_iter().flat_map(|rel| {
            self.edges(rel)
                .iter()
                .map(move |&(s, d)| (rel, map(rel.source(), s), map(rel.target(), d)))
        });
        Self::new(place(&self.t_nodes, t_perm), place(&self.v_nodes, v_perm), edges.collect::<Vec<_>>())
    }
}
