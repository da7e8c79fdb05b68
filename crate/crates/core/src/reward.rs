//! Dense per-step locomotion reward, sparse touchdown reward, and fall
//! termination.

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::clock::{ClockState, Foot};
use crate::error::{Error, Result};
use crate::sim::RobotState;

/// Weight on the sparse footstep reward.
pub const STEP_WEIGHT: f64 = 3.0;

/// Dense reward weights, in breakdown column order.
pub const DENSE_WEIGHTS: [(&str, f64); 9] = [
    ("right_foot_force", 0.155),
    ("left_foot_force", 0.155),
    ("right_foot_speed", 0.125),
    ("left_foot_speed", 0.125),
    ("orientation", 0.125),
    ("pelvis_stability", 0.125),
    ("action_smoothness", 0.0325),
    ("torque_smoothness", 0.0325),
    ("pelvis", 0.125),
];

/// Column names of a breakdown record, dense terms first.
pub const BREAKDOWN_COLUMNS: [&str; 10] = [
    "right_foot_force",
    "left_foot_force",
    "right_foot_speed",
    "left_foot_speed",
    "orientation",
    "pelvis_stability",
    "action_smoothness",
    "torque_smoothness",
    "pelvis",
    "sparse_step",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    /// Swing-foot force decay, 1/N.
    pub k_force: f64,
    /// Stance-foot speed decay, s/m.
    pub k_speed: f64,
    pub k_orientation: f64,
    pub k_action: f64,
    pub k_torque: f64,
    pub k_stability: f64,
    /// Commands shorter than this use the pelvis-stability branch.
    pub progress_min_step: f64,
    /// Use the pelvis-term expressions exactly as originally written
    /// (distance-increase progress and `1 - (e + e)` stability).
    pub literal_pelvis_terms: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            k_force: 0.05,
            k_speed: 2.0,
            k_orientation: 3.0,
            k_action: 1.0,
            k_torque: 0.01,
            k_stability: 1.0,
            progress_min_step: 0.1,
            literal_pelvis_terms: false,
        }
    }
}

/// All reward terms for one policy step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub right_foot_force: f64,
    pub left_foot_force: f64,
    pub right_foot_speed: f64,
    pub left_foot_speed: f64,
    pub orientation: f64,
    pub pelvis_stability: f64,
    pub action_smoothness: f64,
    pub torque_smoothness: f64,
    pub pelvis: f64,
    /// Present only on touchdown steps.
    pub sparse_step: Option<f64>,
}

impl RewardBreakdown {
    pub fn dense_terms(&self) -> [f64; 9] {
        [
            self.right_foot_force,
            self.left_foot_force,
            self.right_foot_speed,
            self.left_foot_speed,
            self.orientation,
            self.pelvis_stability,
            self.action_smoothness,
            self.torque_smoothness,
            self.pelvis,
        ]
    }

    /// Row for the columnar log; the sparse column is 0 off touchdowns.
    pub fn columns(&self) -> [f64; 10] {
        let d = self.dense_terms();
        let mut out = [0.0; 10];
        out[..9].copy_from_slice(&d);
        out[9] = self.sparse_step.unwrap_or(0.0);
        out
    }

    pub fn all(value: f64) -> Self {
        RewardBreakdown {
            right_foot_force: value,
            left_foot_force: value,
            right_foot_speed: value,
            left_foot_speed: value,
            orientation: value,
            pelvis_stability: value,
            action_smoothness: value,
            torque_smoothness: value,
            pelvis: value,
            sparse_step: None,
        }
    }
}

/// Weighted sum of the dense terms plus the weighted sparse term if present.
pub fn total_reward(b: &RewardBreakdown) -> f64 {
    let dense: f64 = DENSE_WEIGHTS
        .iter()
        .zip(b.dense_terms())
        .map(|((_, w), t)| w * t)
        .sum();
    dense + b.sparse_step.map_or(0.0, |s| STEP_WEIGHT * s)
}

/// `exp(-2 f)` for a touchdown landing `f` metres from its target.
pub fn step_reward(f: f64) -> Result<f64> {
    if !(f >= 0.0) {
        return Err(Error::input(format!("step error must be non-negative, got {f}")));
    }
    Ok((-2.0 * f).exp())
}

/// Pelvis term. For commanded steps of at least `progress_min_step` it rewards
/// closing the pelvis-to-target distance, `100 (d_prev - d_curr)`; for shorter
/// steps it rewards a quiet pelvis, `½ (e^{-3|ẋ|} + e^{-3|ẏ|})`.
pub fn pelvis_reward(d_prev: f64, d_curr: f64, v_xy: [f64; 2], step_length: f64, cfg: &RewardConfig) -> f64 {
    let quiet = (-3.0 * v_xy[0].abs()).exp() + (-3.0 * v_xy[1].abs()).exp();
    match (step_length >= cfg.progress_min_step, cfg.literal_pelvis_terms) {
        (true, false) => 100.0 * (d_prev - d_curr),
        (true, true) => 100.0 * (d_curr - d_prev),
        (false, false) => 0.5 * quiet,
        (false, true) => 1.0 - quiet,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FootCycleTerms {
    /// Indexed by [`Foot::index`].
    pub force: [f64; 2],
    pub speed: [f64; 2],
}

/// Swing feet are rewarded for carrying no load, stance feet for not moving.
pub fn foot_cycle_rewards(state: &RobotState, clock: &ClockState, cfg: &RewardConfig) -> FootCycleTerms {
    let mut terms = FootCycleTerms {
        force: [1.0; 2],
        speed: [1.0; 2],
    };
    for foot in Foot::BOTH {
        let leg = state.leg(foot);
        let i = foot.index();
        if clock.in_swing(foot) {
            terms.force[i] = (-cfg.k_force * leg.contact_force.norm()).exp();
        } else {
            terms.speed[i] = (-cfg.k_speed * leg.foot_velocity.norm()).exp();
        }
    }
    terms
}

/// `exp(-k θ²)` with θ the geodesic angle between the pelvis orientation and
/// an upright pose facing `heading`.
pub fn orientation_reward(orientation: &UnitQuaternion<f64>, heading: f64, cfg: &RewardConfig) -> f64 {
    let target = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), heading);
    let angle = orientation.angle_to(&target);
    (-cfg.k_orientation * angle * angle).exp()
}

pub fn pelvis_stability_reward(state: &RobotState, cfg: &RewardConfig) -> f64 {
    let w = state.pelvis.angular_velocity;
    let vz = state.pelvis.linear_velocity.z;
    (-cfg.k_stability * (w.x * w.x + w.y * w.y + vz * vz)).exp()
}

pub fn action_smoothness_reward(prev: &[f64], next: &[f64], cfg: &RewardConfig) -> f64 {
    (-cfg.k_action * l2_diff(prev, next)).exp()
}

pub fn torque_smoothness_reward(prev: &[f64], next: &[f64], cfg: &RewardConfig) -> f64 {
    (-cfg.k_torque * l2_diff(prev, next)).exp()
}

fn l2_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TerminationCheck {
    /// rad
    pub max_tilt: f64,
}

impl Default for TerminationCheck {
    fn default() -> Self {
        TerminationCheck { max_tilt: 0.5 }
    }
}

/// Falls are the only termination; missing a footstep target never ends an
/// episode.
pub fn check_termination(state: &RobotState, check: &TerminationCheck) -> bool {
    state.pelvis.tilt() > check.max_tilt
}
