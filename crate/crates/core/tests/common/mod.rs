#![allow(dead_code)]

use htgnn_core::hetgraph::{HeteroGraph, MetaType, RigLayout, SensorNode, SubType};
use htgnn_core::WindowSample;
use htgnn_tensor::{ParamStore, Tensor};
use rand::Rng;

pub fn random_tensor<R: Rng>(rng: &mut R, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

pub fn random_sample<R: Rng>(rng: &mut R, graph: &HeteroGraph, window: usize) -> WindowSample {
    WindowSample {
        x_t: random_tensor(rng, &[graph.node_count(MetaType::T), window], 1.0),
        x_v: random_tensor(rng, &[graph.node_count(MetaType::V), window], 1.0),
        w: random_tensor(rng, &[window], 1.0),
        y: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
        case_id: 0,
        seen: true,
    }
}

pub fn fill(store: &mut ParamStore, value: f64) {
    for p in store.iter_mut() {
        p.value.data_mut().iter_mut().for_each(|v| *v = value);
    }
}

pub fn set(store: &mut ParamStore, name: &str, values: &[f64]) {
    let id = store.id(name).unwrap_or_else(|| panic!("no parameter {name}"));
    store.get_mut(id).value.data_mut().copy_from_slice(values);
}

pub fn get(store: &ParamStore, name: &str) -> Tensor {
    store.by_name(name).unwrap().value.clone()
}

/// Two temperature and two vibration sensors on one bearing, every
/// relation populated.
pub fn toy_graph() -> HeteroGraph {
    let layout = RigLayout {
        sensors: vec![
            SensorNode::new("t0", SubType::TOr, 1, 0.0),
            SensorNode::new("t1", SubType::TOr, 1, 90.0),
            SensorNode::new("v0", SubType::VAx, 1, 0.0),
            SensorNode::new("v1", SubType::VRa, 1, 90.0),
        ],
    };
    HeteroGraph::build_bearing_graph(&layout).unwrap()
}

/// Small layout with both bearings so every rule contributes edges.
pub fn small_two_bearing_graph() -> HeteroGraph {
    let mut sensors = Vec::new();
    for b in 1..=2u8 {
        for (k, a) in [0.0, 120.0, 240.0].into_iter().enumerate() {
            sensors.push(SensorNode::new(format!("b{b}or{k}"), SubType::TOr, b, a));
        }
        sensors.push(SensorNode::new(format!("b{b}ir"), SubType::TIr, b, 120.0));
        sensors.push(SensorNode::new(format!("b{b}ax"), SubType::VAx, b, 0.0));
        sensors.push(SensorNode::new(format!("b{b}ra"), SubType::VRa, b, 240.0));
    }
    HeteroGraph::build_bearing_graph(&RigLayout { sensors }).unwrap()
}

pub fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = b.first().map_or(0, Vec::len);
    a.iter()
        .map(|row| (0..n).map(|j| row.iter().zip(b).map(|(x, brow)| x * brow[j]).sum()).collect())
        .collect()
}

pub fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    let (r, c) = t.dims2("rows").unwrap();
    (0..r).map(|i| t.data()[i * c..(i + 1) * c].to_vec()).collect()
}

pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
