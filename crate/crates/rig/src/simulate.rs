//! Synthetic 1 Hz recordings of the two-bearing rig.
//!
//! The generative rules are deliberately simple:
//!
//! - Temperature of each sensor relaxes from ambient toward an equilibrium
//!   proportional to speed times a weighted load. Outer-ring sensors weight
//!   the radial load by how deep they sit in the load zone; inner-ring
//!   sensors rotate through it and see a near-uniform share.
//! - Vibration RMS is a floor plus a speed term plus the load component the
//!   sensor's axis picks up, with Gaussian noise.
//! - The speed channel is the commanded speed with small noise.
//!
//! All coefficients live in [`SimConstants`]. Changing any of them changes
//! the dataset, so they are versioned by [`SIM_VERSION`].

use htgnn_core::hetgraph::{MetaType, RigLayout, SensorNode, SubType};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::conditions::OperatingCondition;
use crate::error::{Result, RigError};

pub const SIM_VERSION: u32 = 1;
pub const MIN_DURATION_S: usize = 600;
pub const MAX_DURATION_S: usize = 7200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConstants {
    /// Housing temperature at the start of every recording, deg C.
    pub ambient_c: f64,
    /// Thermal time constant of outer-ring sensors, s.
    pub tau_outer_s: f64,
    /// Thermal time constant of inner-ring sensors, s.
    pub tau_inner_s: f64,
    /// Speed at which the heating coefficients below apply, r/min.
    pub speed_ref_rpm: f64,
    /// Load-independent frictional heating at the reference speed, deg C.
    pub friction_rise_c: f64,
    /// Equilibrium rise per kN of axial load at the reference speed, deg C.
    pub axial_rise_c_per_kn: f64,
    /// Equilibrium rise per kN of radial load in the centre of the load
    /// zone at the reference speed, deg C.
    pub radial_rise_c_per_kn: f64,
    /// Load-zone share seen by inner-ring sensors.
    pub inner_zone_share: f64,
    /// Direction the radial load pushes toward, degrees (180 = bottom).
    pub load_direction_deg: f64,
    /// Temperature measurement noise, deg C.
    pub temp_noise_c: f64,
    /// Temperature quantization step, deg C.
    pub temp_resolution_c: f64,
    /// Vibration RMS with the rig at rest, m/s^2.
    pub vib_floor: f64,
    /// Vibration RMS per r/min.
    pub vib_per_rpm: f64,
    /// Axial sensors: RMS per kN of axial load.
    pub vib_axial_per_kn: f64,
    /// Radial sensors: RMS per kN of projected radial load.
    pub vib_radial_per_kn: f64,
    /// Fraction of the other load direction leaking into a sensor's axis.
    /// Off by default.
    pub vib_crosstalk: f64,
    /// Vibration RMS noise, m/s^2.
    pub vib_noise: f64,
    /// Speed channel noise, r/min.
    pub speed_noise_rpm: f64,
}

impl Default for SimConstants {
    fn default() -> Self {
        Self {
            ambient_c: 22.0,
            tau_outer_s: 1200.0,
            tau_inner_s: 900.0,
            speed_ref_rpm: 10.0,
            friction_rise_c: 2.0,
            axial_rise_c_per_kn: 0.002,
            radial_rise_c_per_kn: 0.04,
            inner_zone_share: 0.5,
            load_direction_deg: 180.0,
            temp_noise_c: 0.02,
            temp_resolution_c: 0.05,
            vib_floor: 0.05,
            vib_per_rpm: 0.01,
            vib_axial_per_kn: 2e-5,
            vib_radial_per_kn: 4e-4,
            vib_crosstalk: 0.0,
            vib_noise: 0.02,
            speed_noise_rpm: 0.05,
        }
    }
}

impl SimConstants {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tau_outer_s", self.tau_outer_s),
            ("tau_inner_s", self.tau_inner_s),
            ("speed_ref_rpm", self.speed_ref_rpm),
            ("temp_resolution_c", self.temp_resolution_c),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(RigError::Constants(format!("{name} must be positive, got {v}")));
            }
        }
        let noise = [self.temp_noise_c, self.vib_noise, self.speed_noise_rpm];
        if noise.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(RigError::Constants("noise levels must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Raw 1 Hz channels of one operating condition. Channel rows follow the
/// layout's canonical node order.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseRecording {
    pub condition: OperatingCondition,
    pub duration: usize,
    pub temperature: Vec<Vec<f64>>,
    pub vibration: Vec<Vec<f64>>,
    pub speed: Vec<f64>,
    pub fx: Vec<f64>,
    pub fy: Vec<f64>,
}

fn angle_cos(a: f64, b: f64) -> f64 {
    (a - b).to_radians().cos()
}

/// Random stream of case `index` under `master_seed`; independent of every
/// other case's stream.
pub fn case_rng(master_seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index as u64);
    rng
}

#[derive(Debug, Clone)]
pub struct Simulator {
    pub constants: SimConstants,
    t_nodes: Vec<SensorNode>,
    v_nodes: Vec<SensorNode>,
}

impl Simulator {
    pub fn new(layout: &RigLayout, constants: SimConstants) -> Result<Self> {
        layout.validate()?;
        constants.validate()?;
        Ok(Self {
            constants,
            t_nodes: layout.ordered(MetaType::T),
            v_nodes: layout.ordered(MetaType::V),
        })
    }

    pub fn temperature_sensors(&self) -> &[SensorNode] {
        &self.t_nodes
    }

    pub fn vibration_sensors(&self) -> &[SensorNode] {
        &self.v_nodes
    }

    /// Load-zone weight of a temperature sensor in `[0, 1]`.
    pub fn zone_factor(&self, node: &SensorNode) -> f64 {
        match node.subtype {
            SubType::TIr => self.constants.inner_zone_share,
            _ => {
                // sensors at exactly 90 deg from the load sit on the zone edge
                let c = angle_cos(node.angle_deg, self.constants.load_direction_deg);
                if c > 1e-12 { c } else { 0.0 }
            }
        }
    }

    /// Temperature the sensor settles at under a condition, deg C.
    pub fn equilibrium_temperature(&self, node: &SensorNode, cond: &OperatingCondition) -> f64 {
        let c = &self.constants;
        let heat = c.friction_rise_c + c.axial_rise_c_per_kn * cond.fx + c.radial_rise_c_per_kn * cond.fy * self.zone_factor(node);
        c.ambient_c + cond.speed / c.speed_ref_rpm * heat
    }

    pub fn time_constant(&self, node: &SensorNode) -> f64 {
        match node.subtype {
            SubType::TIr => self.constants.tau_inner_s,
            _ => self.constants.tau_outer_s,
        }
    }

    /// Noise-free vibration RMS of a sensor under a condition.
    pub fn vibration_level(&self, node: &SensorNode, cond: &OperatingCondition) -> f64 {
        let c = &self.constants;
        let radial_share = 0.5 + 0.5 * angle_cos(node.angle_deg, c.load_direction_deg);
        let load = match node.subtype {
            SubType::VAx => c.vib_axial_per_kn * (cond.fx + c.vib_crosstalk * cond.fy * radial_share),
            _ => c.vib_radial_per_kn * (cond.fy * radial_share + c.vib_crosstalk * cond.fx),
        };
        c.vib_floor + c.vib_per_rpm * cond.speed + load
    }

    /// Generates one recording. Deterministic in `(master_seed, index)`.
    pub fn simulate_case(
        &self,
        cond: &OperatingCondition,
        duration: usize,
        master_seed: u64,
        index: usize,
    ) -> Result<CaseRecording> {
        if !(MIN_DURATION_S..=MAX_DURATION_S).contains(&duration) {
            return Err(RigError::Duration(duration));
        }
        let c = &self.constants;
        let mut rng = case_rng(master_seed, index);
        let noise = |sd: f64| Normal::new(0.0, sd).map_err(|e| RigError::Constants(format!("noise level {sd}: {e}")));
        let temp_noise = noise(c.temp_noise_c)?;
        let vib_noise = noise(c.vib_noise)?;
        let speed_noise = noise(c.speed_noise_rpm)?;

        let mut temperature = Vec::with_capacity(self.t_nodes.len());
        for node in &self.t_nodes {
            let t_eq = self.equilibrium_temperature(node, cond);
            let decay = (-1.0 / self.time_constant(node)).exp();
            let mut state = c.ambient_c;
            let mut row = Vec::with_capacity(duration);
            for _ in 0..duration {
                let measured = state + temp_noise.sample(&mut rng);
                row.push((measured / c.temp_resolution_c).round() * c.temp_resolution_c);
                state = t_eq + (state - t_eq) * decay;
            }
            temperature.push(row);
        }
        let vibration = self
            .v_nodes
            .iter()
            .map(|node| {
                let level = self.vibration_level(node, cond);
                (0..duration).map(|_| (level + vib_noise.sample(&mut rng)).abs()).collect()
            })
            .collect();
        let speed = (0..duration)
            .map(|_| (cond.speed + speed_noise.sample(&mut rng)).max(0.0))
            .collect();
        Ok(CaseRecording {
            condition: *cond,
            duration,
            temperature,
            vibration,
            speed,
            fx: vec![cond.fx; duration],
            fy: vec![cond.fy; duration],
        })
    }
}
