use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::command::uniform;
use crate::error::{Error, Result};
use crate::rng::rng_from;

/// Joints per leg: hip roll, hip pitch, prismatic length.
pub const JOINTS_PER_LEG: usize = 3;
pub const N_JOINTS: usize = 2 * JOINTS_PER_LEG;

/// Per-episode dynamics randomization ranges. Mass and damping are scale
/// factors on the base values; friction is an absolute coefficient range.
///
/// The defaults are placeholders for sim-to-real style ranges and are not
/// tuned against hardware.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DynamicsRandomization {
    pub mass_scale: [f64; 2],
    pub friction: [f64; 2],
    pub damping_scale: [f64; 2],
}

impl Default for DynamicsRandomization {
    fn default() -> Self {
        DynamicsRandomization {
            mass_scale: [0.85, 1.15],
            friction: [0.6, 1.2],
            damping_scale: [0.7, 1.3],
        }
    }
}

impl DynamicsRandomization {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("mass_scale", self.mass_scale),
            ("friction", self.friction),
            ("damping_scale", self.damping_scale),
        ] {
            if !(r[0] <= r[1]) {
                return Err(Error::config(format!(
                    "randomization range {name} inverted: [{}, {}]",
                    r[0], r[1]
                )));
            }
        }
        Ok(())
    }
}

/// Physical parameters of the reduced-order biped.
///
/// Joint arrays are ordered `[hip roll, hip pitch, leg length]` and shared by
/// both legs. Legs are massless; `joint_inertia` is the reflected actuator
/// inertia that gives each joint its own dynamics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// kg
    pub pelvis_mass: f64,
    /// Principal moments in the pelvis frame, kg·m².
    pub pelvis_inertia: [f64; 3],
    /// Lateral hip offset from the pelvis centre, m. Left hip at +y.
    pub hip_width: f64,
    /// Leg length in the nominal standing pose, m.
    pub nominal_leg_length: f64,
    pub joint_inertia: [f64; 3],
    pub kp: [f64; 3],
    pub kd: [f64; 3],
    /// Passive viscous joint damping.
    pub joint_damping: [f64; 3],
    pub joint_lower: [f64; 3],
    pub joint_upper: [f64; 3],
    /// Restoring stiffness inside `limit_margin` of a joint limit.
    pub limit_stiffness: [f64; 3],
    pub limit_margin: f64,
    /// Contact normal stiffness, N/m.
    pub contact_stiffness: f64,
    /// Contact normal damping, N·s/m.
    pub contact_damping: f64,
    pub friction: f64,
    /// Slip speed at which smoothed friction reaches ~70% of μ·N, m/s.
    pub friction_smoothing: f64,
    /// m/s², acting along -z.
    pub gravity: f64,
    pub ground_height: f64,
    /// Inner PD/integration step, s.
    pub inner_dt: f64,
    /// Policy step, s. Must be an integer multiple of `inner_dt`.
    pub policy_dt: f64,
    pub randomization: DynamicsRandomization,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            pelvis_mass: 30.0,
            pelvis_inertia: [1.0, 0.8, 0.6],
            hip_width: 0.1,
            nominal_leg_length: 0.8,
            joint_inertia: [0.2, 0.2, 2.0],
            kp: [200.0, 200.0, 6000.0],
            kd: [10.0, 10.0, 300.0],
            joint_damping: [0.5, 0.5, 5.0],
            joint_lower: [-0.4, -1.0, 0.5],
            joint_upper: [0.4, 1.0, 0.95],
            limit_stiffness: [500.0, 500.0, 20000.0],
            limit_margin: 0.02,
            contact_stiffness: 20000.0,
            contact_damping: 500.0,
            friction: 0.9,
            friction_smoothing: 0.05,
            gravity: 9.81,
            ground_height: 0.0,
            inner_dt: 5e-4,
            policy_dt: 0.025,
            randomization: DynamicsRandomization::default(),
        }
    }
}

impl SimConfig {
    /// Number of inner substeps per policy step.
    pub fn substeps(&self) -> Result<usize> {
        if !(self.inner_dt > 0.0) || !(self.policy_dt > 0.0) {
            return Err(Error::config("time steps must be positive"));
        }
        let ratio = self.policy_dt / self.inner_dt;
        let n = ratio.round();
        if n < 1.0 || (ratio - n).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::config(format!(
                "policy_dt / inner_dt = {ratio} is not a positive integer"
            )));
        }
        Ok(n as usize)
    }

    pub fn validate(&self) -> Result<()> {
        self.substeps()?;
        if !(self.pelvis_mass > 0.0) || self.pelvis_inertia.iter().any(|&i| !(i > 0.0)) {
            return Err(Error::config("pelvis mass and inertia must be positive"));
        }
        if self.joint_inertia.iter().any(|&i| !(i > 0.0)) {
            return Err(Error::config("joint inertias must be positive"));
        }
        for j in 0..3 {
            if !(self.joint_lower[j] < self.joint_upper[j]) {
                return Err(Error::config(format!("joint {j} limits inverted")));
            }
        }
        let l = self.nominal_leg_length;
        if !(self.joint_lower[2] <= l && l <= self.joint_upper[2]) {
            return Err(Error::config("nominal leg length outside prismatic limits"));
        }
        if self.friction < 0.0 || self.friction_smoothing <= 0.0 {
            return Err(Error::config("friction parameters must be non-negative"));
        }
        self.randomization.validate()
    }

    /// Nominal joint pose `[roll, pitch, length]` of one leg.
    pub fn nominal_joints(&self) -> [f64; 3] {
        [0.0, 0.0, self.nominal_leg_length]
    }

    /// Pelvis height with both legs at the nominal pose and feet at ground
    /// level (zero penetration).
    pub fn nominal_height(&self) -> f64 {
        self.ground_height + self.nominal_leg_length
    }
}

/// Draws per-episode physical parameters. The base config is left untouched.
pub fn apply_dynamics_randomization(config: &SimConfig, seed: u64) -> Result<SimConfig> {
    let r = &config.randomization;
    r.validate()?;
    let mut rng = rng_from(seed, &[0xD1A]);
    let mass_scale = uniform(&mut rng, r.mass_scale);
    let friction = uniform(&mut rng, r.friction);
    let damping_scale = uniform(&mut rng, r.damping_scale);
    // keep the stream length fixed regardless of degeneracy
    let _ = rng.random::<u32>();

    let mut out = config.clone();
    out.pelvis_mass *= mass_scale;
    for i in 0..3 {
        out.pelvis_inertia[i] *= mass_scale;
        out.joint_damping[i] *= damping_scale;
    }
    out.friction = friction;
    Ok(out)
}
