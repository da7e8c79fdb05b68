//! Footstep-following task: observation layout, step semantics, and the
//! environments that implement them.

mod footstep;
mod gait;
mod scripted;

pub use footstep::{EnvConfig, FootstepEnv, TaskKind};
pub use gait::GaitState;
pub use scripted::{LandingRule, ScriptedWalker};

use serde::{Deserialize, Serialize};

use crate::clock::{clock_inputs, ClockState, Foot, GammaSchedule};
use crate::command::{FootstepCommand, FootstepTracker, TouchdownRecord};
use crate::error::Result;
use crate::reward::RewardBreakdown;
use crate::sim::N_JOINTS;

/// Observation layout, in order:
///
/// | slice | content |
/// |-------|---------|
/// | 0..3 | pelvis angular velocity, body frame |
/// | 3..7 | pelvis orientation quaternion `(w, x, y, z)` |
/// | 7..7+n | joint positions, left leg first |
/// | 7+n..7+2n | joint velocities |
/// | +2 | clock inputs |
/// | +2 | swing ratios, left then right |
/// | +1 | turn rate |
/// | +2 | observed command `(L, θ)` |
pub const fn observation_dim(n_joints: usize) -> usize {
    12 + 2 * n_joints + 2
}

pub const OBS_DIM: usize = observation_dim(N_JOINTS);
pub const ACTION_DIM: usize = N_JOINTS;

/// Offsets into the observation vector.
pub mod obs_index {
    use super::N_JOINTS;
    pub const ANGULAR_VELOCITY: usize = 0;
    pub const ORIENTATION: usize = 3;
    pub const JOINT_POSITIONS: usize = 7;
    pub const JOINT_VELOCITIES: usize = JOINT_POSITIONS + N_JOINTS;
    pub const CLOCK: usize = JOINT_VELOCITIES + N_JOINTS;
    pub const RATIOS: usize = CLOCK + 2;
    pub const TURN_RATE: usize = RATIOS + 2;
    pub const COMMAND: usize = TURN_RATE + 1;
}

pub struct ObservationParts<'a> {
    pub angular_velocity: [f64; 3],
    pub orientation: [f64; 4],
    pub joint_positions: &'a [f64],
    pub joint_velocities: &'a [f64],
    pub clock: &'a ClockState,
    pub turn_rate: f64,
    pub command: FootstepCommand,
}

pub fn assemble_observation(p: &ObservationParts) -> Vec<f64> {
    let mut o = Vec::with_capacity(observation_dim(p.joint_positions.len()));
    o.extend_from_slice(&p.angular_velocity);
    o.extend_from_slice(&p.orientation);
    o.extend_from_slice(p.joint_positions);
    o.extend_from_slice(p.joint_velocities);
    o.extend_from_slice(&clock_inputs(p.clock.phi));
    o.extend_from_slice(&p.clock.ratios);
    o.push(p.turn_rate);
    o.push(p.command.l_step);
    o.push(p.command.theta_step);
    o
}

/// Result of one policy step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub breakdown: RewardBreakdown,
    pub touchdown: Option<TouchdownRecord>,
    /// The robot fell.
    pub terminal: bool,
    /// The episode was cut short: horizon reached or the simulator diverged.
    pub truncated: bool,
    pub diverged: bool,
    /// Control parameters were re-drawn this step.
    pub randomized: bool,
}

impl StepOutcome {
    pub fn done(&self) -> bool {
        self.terminal || self.truncated
    }
}

/// Rigid-body pose summary for visualization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BodySnapshot {
    pub pelvis_position: [f64; 3],
    /// Quaternion `(w, x, y, z)`.
    pub pelvis_orientation: [f64; 4],
    pub pelvis_yaw: f64,
    /// Indexed by [`Foot::index`](crate::clock::Foot::index).
    pub feet: [[f64; 3]; 2],
    pub contacts: [bool; 2],
}

/// Anything that walks under a gait clock and reports touchdowns.
pub trait SteppingEnv: Send {
    fn observation_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn reset(&mut self, seed: u64) -> Result<Vec<f64>>;
    fn step(&mut self, action: &[f64]) -> Result<StepOutcome>;
    fn observation(&self) -> Vec<f64>;
    fn gait(&self) -> &GaitState;
    fn gait_mut(&mut self) -> &mut GaitState;
    /// Horizontal pelvis speed, m/s.
    fn pelvis_speed(&self) -> f64;
    fn set_horizon(&mut self, horizon: usize);
    /// Turns control-parameter randomization on or off.
    fn set_randomization(&mut self, on: bool);

    fn clock(&self) -> &ClockState {
        &self.gait().clock
    }

    fn tracker(&self) -> &FootstepTracker {
        &self.gait().tracker
    }

    fn set_gamma_schedule(&mut self, schedule: GammaSchedule) {
        self.gait_mut().schedule = schedule;
    }

    /// Kinematic stand-in: feet at their last touchdowns, pelvis between
    /// them, stance feet in contact.
    fn body(&self) -> BodySnapshot {
        let g = self.gait();
        let [l, r] = [Foot::Left, Foot::Right].map(|f| g.tracker.last_touchdown(f));
        let yaw = g.tracker.heading;
        BodySnapshot {
            pelvis_position: [(l[0] + r[0]) / 2.0, (l[1] + r[1]) / 2.0, 1.0],
            pelvis_orientation: [(yaw / 2.0).cos(), 0.0, 0.0, (yaw / 2.0).sin()],
            pelvis_yaw: yaw,
            feet: [[l[0], l[1], 0.0], [r[0], r[1], 0.0]],
            contacts: [Foot::Left, Foot::Right].map(|f| g.clock.in_stance(f)),
        }
    }
}

#[cfg(test)]
mod tests;
