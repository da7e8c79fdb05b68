//! Reduced-order 3D biped: a rigid pelvis with two massless 3-DoF legs
//! (hip roll, hip pitch, prismatic length) ending in point feet, penalty
//! ground contact with smoothed Coulomb friction, and a fixed-gain joint PD
//! loop running at the inner rate.

mod config;
mod dynamics;

pub use config::{
    apply_dynamics_randomization, DynamicsRandomization, SimConfig, JOINTS_PER_LEG, N_JOINTS,
};
pub use dynamics::{contact_force, leg_kinematics, mechanical_energy, step_physics, LegKinematics};

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::clock::Foot;
use crate::command::uniform;
use crate::error::{Error, Result};
use crate::rng::rng_from;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigidBodyState {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
    pub linear_velocity: Vector3<f64>,
    /// Expressed in the body frame.
    pub angular_velocity: Vector3<f64>,
}

impl RigidBodyState {
    pub fn is_finite(&self) -> bool {
        let q = self.orientation.quaternion();
        self.position.iter().all(|v| v.is_finite())
            && q.coords.iter().all(|v| v.is_finite())
            && self.linear_velocity.iter().all(|v| v.is_finite())
            && self.angular_velocity.iter().all(|v| v.is_finite())
    }

    /// Angle between the body up-axis and world vertical.
    pub fn tilt(&self) -> f64 {
        let up = self.orientation * Vector3::z();
        up.z.clamp(-1.0, 1.0).acos()
    }

    /// Heading of the body x-axis projected onto the ground plane.
    pub fn yaw(&self) -> f64 {
        let fwd = self.orientation * Vector3::x();
        fwd.y.atan2(fwd.x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegState {
    /// `[hip roll rad, hip pitch rad, length m]`
    pub joint_positions: [f64; 3],
    pub joint_velocities: [f64; 3],
    pub foot_position: Vector3<f64>,
    pub foot_velocity: Vector3<f64>,
    pub contact_force: Vector3<f64>,
}

impl LegState {
    pub fn in_contact(&self) -> bool {
        self.contact_force.z > 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub pelvis: RigidBodyState,
    /// Indexed by [`Foot::index`].
    pub legs: [LegState; 2],
    pub time: f64,
    /// Mean PD torque of each joint over the last policy step.
    pub last_torques: [f64; N_JOINTS],
}

impl RobotState {
    pub fn leg(&self, foot: Foot) -> &LegState {
        &self.legs[foot.index()]
    }

    pub fn joint_positions(&self) -> [f64; N_JOINTS] {
        let mut out = [0.0; N_JOINTS];
        for (i, leg) in self.legs.iter().enumerate() {
            out[i * 3..i * 3 + 3].copy_from_slice(&leg.joint_positions);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.pelvis.is_finite()
            && self.time.is_finite()
            && self.legs.iter().all(|l| {
                l.joint_positions.iter().all(|v| v.is_finite())
                    && l.joint_velocities.iter().all(|v| v.is_finite())
                    && l.foot_position.iter().all(|v| v.is_finite())
                    && l.foot_velocity.iter().all(|v| v.is_finite())
                    && l.contact_force.iter().all(|v| v.is_finite())
            })
    }

    /// Ground-plane position of a foot.
    pub fn foot_xy(&self, foot: Foot) -> [f64; 2] {
        let p = self.leg(foot).foot_position;
        [p.x, p.y]
    }
}

/// Joint-space PD setpoints for all six actuated joints, left leg first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionCommand {
    pub pd_setpoints: Vec<f64>,
}

impl ActionCommand {
    pub fn new(pd_setpoints: Vec<f64>) -> Self {
        ActionCommand { pd_setpoints }
    }

    /// Setpoints equal to the nominal standing pose.
    pub fn nominal(config: &SimConfig) -> Self {
        let n = config.nominal_joints();
        ActionCommand::new([n, n].concat())
    }

    /// Holds the current joint positions.
    pub fn hold(state: &RobotState) -> Self {
        ActionCommand::new(state.joint_positions().to_vec())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResetMode {
    /// Nominal stance at rest, feet exactly at ground level.
    Nominal,
    /// Small random perturbations of pose and velocities.
    Randomized,
}

/// Initial state for an episode.
pub fn reset(seed: u64, mode: ResetMode, config: &SimConfig) -> Result<RobotState> {
    config.validate()?;
    let nominal = config.nominal_joints();
    let mut joints = [nominal, nominal];
    let mut joint_vel = [[0.0; 3]; 2];
    let mut orientation = UnitQuaternion::identity();
    let mut lin_vel = Vector3::zeros();
    let mut ang_vel = Vector3::zeros();

    if mode == ResetMode::Randomized {
        let mut rng = rng_from(seed, &[0x5E5E7]);
        let roll = uniform(&mut rng, [-0.05, 0.05]);
        let pitch = uniform(&mut rng, [-0.05, 0.05]);
        let yaw = uniform(&mut rng, [-0.2, 0.2]);
        orientation = UnitQuaternion::from_euler_angles(roll, pitch, yaw);
        for leg in 0..2 {
            joints[leg][0] += uniform(&mut rng, [-0.05, 0.05]);
            joints[leg][1] += uniform(&mut rng, [-0.15, 0.15]);
            joints[leg][2] += uniform(&mut rng, [-0.05, 0.05]);
            for j in 0..3 {
                joint_vel[leg][j] = uniform(&mut rng, [-0.2, 0.2]);
            }
        }
        lin_vel = Vector3::new(
            uniform(&mut rng, [-0.3, 0.3]),
            uniform(&mut rng, [-0.2, 0.2]),
            0.0,
        );
        ang_vel = Vector3::new(
            uniform(&mut rng, [-0.2, 0.2]),
            uniform(&mut rng, [-0.2, 0.2]),
            uniform(&mut rng, [-0.2, 0.2]),
        );
    }

    let pelvis = RigidBodyState {
        position: Vector3::new(0.0, 0.0, config.nominal_height()),
        orientation,
        linear_velocity: lin_vel,
        angular_velocity: ang_vel,
    };
    let mut state = RobotState {
        pelvis,
        legs: std::array::from_fn(|i| LegState {
            joint_positions: joints[i],
            joint_velocities: joint_vel[i],
            foot_position: Vector3::zeros(),
            foot_velocity: Vector3::zeros(),
            contact_force: Vector3::zeros(),
        }),
        time: 0.0,
        last_torques: [0.0; N_JOINTS],
    };
    if mode == ResetMode::Randomized {
        // lift or drop the pelvis so the lowest foot touches the ground
        let lowest = Foot::BOTH
            .iter()
            .map(|&f| leg_kinematics(&state, f, config).foot_world.z)
            .fold(f64::INFINITY, f64::min);
        state.pelvis.position.z += config.ground_height - lowest;
    }
    dynamics::refresh_feet(&mut state, config);
    if !state.is_finite() {
        return Err(Error::SimulationDiverged("non-finite reset state".into()));
    }
    Ok(state)
}

#[cfg(test)]
mod tests;
