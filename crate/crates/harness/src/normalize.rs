//! Standardization fitted on training windows.
//!
//! Inputs are scaled per signal group (all temperature rates share one
//! mean and deviation, likewise vibration and speed) so that the relative
//! levels of sensors within a group survive. Targets are scaled per load
//! component.

use htgnn_core::WindowSample;
use htgnn_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub mean: f64,
    pub std: f64,
}

impl Affine {
    fn fit<'a>(values: impl Iterator<Item = &'a f64>) -> Self {
        let (mut n, mut sum, mut sq) = (0usize, 0.0, 0.0);
        for v in values {
            n += 1;
            sum += v;
            sq += v * v;
        }
        let mean = sum / n.max(1) as f64;
        let var = (sq / n.max(1) as f64 - mean * mean).max(0.0);
        let std = var.sqrt();
        // constant signals are centred but left unscaled
        Self {
            mean,
            std: if std > 1e-12 { std } else { 1.0 },
        }
    }

    pub fn forward(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn inverse(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub temperature: Affine,
    pub vibration: Affine,
    pub speed: Affine,
    pub targets: [Affine; 2],
}

impl Normalizer {
    pub fn fit<S: AsRef<WindowSample>>(windows: &[S]) -> Result<Self> {
        if windows.is_empty() {
            return Err(HarnessError::Empty("fit the normalizer on"));
        }
        let w = || windows.iter().map(AsRef::as_ref);
        Ok(Self {
            temperature: Affine::fit(w().flat_map(|s| s.x_t.data())),
            vibration: Affine::fit(w().flat_map(|s| s.x_v.data())),
            speed: Affine::fit(w().flat_map(|s| s.w.data())),
            targets: [0, 1].map(|k| Affine::fit(w().map(|s| &s.y[k]))),
        })
    }

    fn map(t: &Tensor, a: Affine) -> Tensor {
        let mut out = t.clone();
        out.data_mut().iter_mut().for_each(|v| *v = a.forward(*v));
        out
    }

    /// Standardized copy of a window, targets included.
    pub fn apply(&self, s: &WindowSample) -> WindowSample {
        WindowSample {
            x_t: Self::map(&s.x_t, self.temperature),
            x_v: Self::map(&s.x_v, self.vibration),
            w: Self::map(&s.w, self.speed),
            y: [self.targets[0].forward(s.y[0]), self.targets[1].forward(s.y[1])],
            ..s.clone()
        }
    }

    /// Maps standardized `B x 2` predictions back to kN.
    pub fn loads(&self, z: &Tensor) -> Result<Vec<[f64; 2]>> {
        let (rows, cols) = z.dims2("loads")?;
        if cols != 2 {
            return Err(HarnessError::Config(format!("predictions have {cols} columns")));
        }
        Ok((0..rows)
            .map(|i| [self.targets[0].inverse(z.at2(i, 0)), self.targets[1].inverse(z.at2(i, 1))])
            .collect())
    }
}
