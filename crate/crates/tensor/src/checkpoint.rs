//! Parameter container: an ordered list of `{name, shape, values}` records.
//!
//! Serialized as JSON. Floats are written in shortest round-trip form, so a
//! save/load cycle reproduces every parameter bit for bit.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TensorError};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamContainer {
    pub params: Vec<ParamRecord>,
}

impl ParamContainer {
    pub fn from_store(store: &ParamStore) -> Self {
        let params = store
            .iter()
            .map(|(_, p)| ParamRecord {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                values: p.value.data().to_vec(),
            })
            .collect();
        Self { params }
    }

    /// Copies values into an already-built store. Names and shapes must match
    /// exactly; extra or missing records are errors.
    pub fn load_into(&self, store: &mut ParamStore) -> Result<()> {
        if self.params.len() != store.len() {
            return Err(TensorError::Checkpoint(format!(
                "container has {} parameters, model expects {}",
                self.params.len(),
                store.len()
            )));
        }
        for rec in &self.params {
            let id = store
                .id(&rec.name)
                .ok_or_else(|| TensorError::UnknownParameter(rec.name.clone()))?;
            let p = store.get_mut(id);
            if p.value.shape() != rec.shape.as_slice() {
                return Err(TensorError::ShapeMismatch {
                    op: "checkpoint load",
                    lhs: p.value.shape().to_vec(),
                    rhs: rec.shape.clone(),
                });
            }
            p.value = Tensor::new(rec.shape.clone(), rec.values.clone())?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| TensorError::Checkpoint(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| TensorError::Checkpoint(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut s = ParamStore::new();
        s.insert("a", Tensor::vector(vec![0.1, 1.0 / 3.0, -2.5e-300]))
            .unwrap();
        s.insert("b", Tensor::matrix(1, 2, vec![std::f64::consts::PI, 7.0]).unwrap())
            .unwrap();
        let json = ParamContainer::from_store(&s).to_json().unwrap();
        let mut t = s.clone();
        t.iter_mut()
            .for_each(|p| p.value.data_mut().iter_mut().for_each(|v| *v = 0.0));
        ParamContainer::from_json(&json).unwrap().load_into(&mut t).unwrap();
        for ((_, a), (_, b)) in s.iter().zip(t.iter()) {
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut s = ParamStore::new();
        s.insert("a", Tensor::vector(vec![1.0, 2.0])).unwrap();
        let mut c = ParamContainer::from_store(&s);
        c.params[0].shape = vec![1, 2];
        assert!(c.load_into(&mut s).is_err());
    }
}
