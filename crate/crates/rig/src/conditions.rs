//! Operating conditions: the cross product of axial load, radial load and
//! speed levels.

use serde::{Deserialize, Serialize};

use crate::error::{Result, RigError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingCondition {
    /// Axial load, kN.
    pub fx: f64,
    /// Radial load, kN.
    pub fy: f64,
    /// Rotational speed, r/min.
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub axial_kn: Vec<f64>,
    pub radial_kn: Vec<f64>,
    pub speed_rpm: Vec<f64>,
}

impl Default for GridSpec {
    /// 7 x 4 x 2 = 56 conditions.
    fn default() -> Self {
        Self {
            axial_kn: (1..=7).map(|k| 1000.0 * k as f64).collect(),
            radial_kn: (1..=4).map(|k| 100.0 * k as f64).collect(),
            speed_rpm: vec![10.0, 20.0],
        }
    }
}

/// Every combination of the grid levels, axial-major then radial then speed.
pub fn generate_condition_grid(spec: &GridSpec) -> Result<Vec<OperatingCondition>> {
    for (name, axis) in [
        ("axial", &spec.axial_kn),
        ("radial", &spec.radial_kn),
        ("speed", &spec.speed_rpm),
    ] {
        if axis.is_empty() {
            return Err(RigError::Grid(format!("{name} axis has no levels")));
        }
        if axis.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(RigError::Grid(format!("{name} levels must be finite and non-negative")));
        }
        let mut sorted = axis.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(RigError::Grid(format!("{name} axis repeats a level")));
        }
    }
    let mut out = Vec::with_capacity(spec.axial_kn.len() * spec.radial_kn.len() * spec.speed_rpm.len());
    for &fx in &spec.axial_kn {
        for &fy in &spec.radial_kn {
            for &speed in &spec.speed_rpm {
                out.push(OperatingCondition { fx, fy, speed });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_has_56_conditions() {
        assert_eq!(generate_condition_grid(&GridSpec::default()).unwrap().len(), 56);
    }

    #[test]
    fn single_levels_give_one_condition() {
        let spec = GridSpec {
            axial_kn: vec![2000.0],
            radial_kn: vec![150.0],
            speed_rpm: vec![12.0],
        };
        let grid = generate_condition_grid(&spec).unwrap();
        assert_eq!(grid, vec![OperatingCondition { fx: 2000.0, fy: 150.0, speed: 12.0 }]);
    }

    #[test]
    fn empty_or_repeated_axes_are_rejected() {
        let empty = GridSpec {
            speed_rpm: vec![],
            ..GridSpec::default()
        };
        assert!(generate_condition_grid(&empty).is_err());
        let repeated = GridSpec {
            radial_kn: vec![100.0, 100.0],
            ..GridSpec::default()
        };
        assert!(generate_condition_grid(&repeated).is_err());
    }
}
