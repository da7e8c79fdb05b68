use nalgebra::{Matrix3, UnitQuaternion, Vector3};

use super::{ActionCommand, RobotState, SimConfig, N_JOINTS};
use crate::clock::Foot;
use crate::error::{Error, Result};

/// World-frame kinematics of one leg.
#[derive(Debug, Clone, Copy)]
pub struct LegKinematics {
    /// Foot position relative to the pelvis centre, world axes.
    pub lever: Vector3<f64>,
    pub foot_world: Vector3<f64>,
    /// d(foot_world) / d(joint positions), world axes.
    pub jacobian: Matrix3<f64>,
    /// Velocity of the foot point if the joints were frozen.
    pub base_velocity: Vector3<f64>,
    pub foot_velocity: Vector3<f64>,
}

fn side(foot: Foot) -> f64 {
    match foot {
        Foot::Left => 1.0,
        Foot::Right => -1.0,
    }
}

pub fn leg_kinematics(state: &RobotState, foot: Foot, config: &SimConfig) -> LegKinematics {
    let leg = state.leg(foot);
    let [roll, pitch, len] = leg.joint_positions;
    let (sr, cr) = roll.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    // unit leg axis: positive pitch swings the foot forward, positive roll
    // swings it left
    let axis = Vector3::new(sp, cp * sr, -cp * cr);
    let hip = Vector3::new(0.0, side(foot) * config.hip_width, 0.0);
    let foot_body = hip + len * axis;
    let d_roll = len * Vector3::new(0.0, cp * cr, cp * sr);
    let d_pitch = len * Vector3::new(cp, -sp * sr, sp * cr);
    let jac_body = Matrix3::from_columns(&[d_roll, d_pitch, axis]);

    let rot = state.pelvis.orientation.to_rotation_matrix();
    let lever = rot * foot_body;
    let jacobian = rot.matrix() * jac_body;
    let omega_world = rot * state.pelvis.angular_velocity;
    let base_velocity = state.pelvis.linear_velocity + omega_world.cross(&lever);
    let qd = Vector3::from(leg.joint_velocities);
    LegKinematics {
        lever,
        foot_world: state.pelvis.position + lever,
        jacobian,
        base_velocity,
        foot_velocity: base_velocity + jacobian * qd,
    }
}

/// Contact force on a foot at the given position and velocity: penalty
/// spring-damper along +z, clipped to be non-adhesive, and smoothed Coulomb
/// friction `-μ N v_t / sqrt(|v_t|² + v_s²)`.
pub fn contact_force(position: &Vector3<f64>, velocity: &Vector3<f64>, config: &SimConfig) -> Vector3<f64> {
    let penetration = config.ground_height - position.z;
    if penetration <= 0.0 {
        return Vector3::zeros();
    }
    let normal = (config.contact_stiffness * penetration - config.contact_damping * velocity.z).max(0.0);
    if normal == 0.0 {
        return Vector3::zeros();
    }
    let vt = Vector3::new(velocity.x, velocity.y, 0.0);
    let scale = config.friction * normal / (vt.norm_squared() + config.friction_smoothing.powi(2)).sqrt();
    Vector3::new(-scale * vt.x, -scale * vt.y, normal)
}

/// Recomputes foot positions, velocities and contact forces from the
/// generalized state.
pub(crate) fn refresh_feet(state: &mut RobotState, config: &SimConfig) {
    for foot in Foot::BOTH {
        let k = leg_kinematics(state, foot, config);
        let leg = &mut state.legs[foot.index()];
        leg.foot_position = k.foot_world;
        leg.foot_velocity = k.foot_velocity;
        leg.contact_force = contact_force(&k.foot_world, &k.foot_velocity, config);
    }
}

/// Pelvis kinetic + potential energy plus reflected joint kinetic energy.
pub fn mechanical_energy(state: &RobotState, config: &SimConfig) -> f64 {
    let p = &state.pelvis;
    let inertia = Vector3::from(config.pelvis_inertia);
    let rot_ke = 0.5 * p.angular_velocity.component_mul(&inertia).dot(&p.angular_velocity);
    let lin_ke = 0.5 * config.pelvis_mass * p.linear_velocity.norm_squared();
    let pe = config.pelvis_mass * config.gravity * p.position.z;
    let joint_ke: f64 = state
        .legs
        .iter()
        .flat_map(|l| (0..3).map(move |j| 0.5 * config.joint_inertia[j] * l.joint_velocities[j].powi(2)))
        .sum();
    lin_ke + rot_ke + pe + joint_ke
}

fn limit_torque(q: f64, j: usize, config: &SimConfig) -> f64 {
    let lo = config.joint_lower[j] + config.limit_margin;
    let hi = config.joint_upper[j] - config.limit_margin;
    if q < lo {
        config.limit_stiffness[j] * (lo - q)
    } else if q > hi {
        config.limit_stiffness[j] * (hi - q)
    } else {
        0.0
    }
}

struct LegUpdate {
    joint_velocities: Vector3<f64>,
    force: Vector3<f64>,
    torque: Vector3<f64>,
    lever: Vector3<f64>,
}

/// Joint velocity update for one leg. PD damping, passive damping and the
/// contact damping/friction seen through the leg Jacobian are treated
/// implicitly; the pelvis motion is taken as given.
fn update_leg(state: &RobotState, foot: Foot, setpoints: &[f64], config: &SimConfig, dt: f64) -> Result<LegUpdate> {
    let leg = state.leg(foot);
    let k = leg_kinematics(state, foot, config);
    let q = Vector3::from(leg.joint_positions);
    let qd = Vector3::from(leg.joint_velocities);

    let inertia = Matrix3::from_diagonal(&Vector3::from(config.joint_inertia));
    let damping = Matrix3::from_diagonal(&Vector3::from(std::array::from_fn::<f64, 3, _>(|j| {
        config.kd[j] + config.joint_damping[j]
    })));
    let spring = Vector3::from(std::array::from_fn::<f64, 3, _>(|j| {
        config.kp[j] * (setpoints[j] - q[j]) + limit_torque(q[j], j, config)
    }));

    let mut lhs = inertia + damping * dt;
    let mut rhs = inertia * qd + spring * dt;

    let penetration = config.ground_height - k.foot_world.z;
    let mut in_contact = false;
    let mut tangential_gain = 0.0;
    if penetration > 0.0 {
        let elastic = config.contact_stiffness * penetration;
        let normal_est = (elastic - config.contact_damping * k.foot_velocity.z).max(0.0);
        if normal_est > 0.0 {
            in_contact = true;
            let vt = Vector3::new(k.foot_velocity.x, k.foot_velocity.y, 0.0);
            tangential_gain = config.friction * normal_est
                / (vt.norm_squared() + config.friction_smoothing.powi(2)).sqrt();
            let c = Matrix3::from_diagonal(&Vector3::new(
                tangential_gain,
                tangential_gain,
                config.contact_damping,
            ));
            let jt = k.jacobian.transpose();
            lhs += jt * c * k.jacobian * dt;
            rhs += jt * (Vector3::new(0.0, 0.0, elastic) - c * k.base_velocity) * dt;
        }
    }

    let joint_velocities = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::SimulationDiverged("singular joint system".into()))?;

    let force = if in_contact {
        let v = k.base_velocity + k.jacobian * joint_velocities;
        let elastic = config.contact_stiffness * penetration;
        let normal = (elastic - config.contact_damping * v.z).max(0.0);
        let mut ft = Vector3::new(-tangential_gain * v.x, -tangential_gain * v.y, 0.0);
        let cap = config.friction * normal;
        let mag = ft.norm();
        if mag > cap {
            ft *= if mag > 0.0 { cap / mag } else { 0.0 };
        }
        Vector3::new(ft.x, ft.y, normal)
    } else {
        Vector3::zeros()
    };

    let torque = Vector3::from(std::array::from_fn::<f64, 3, _>(|j| {
        config.kp[j] * (setpoints[j] - q[j]) - config.kd[j] * joint_velocities[j]
    }));
    Ok(LegUpdate {
        joint_velocities,
        force,
        torque,
        lever: k.lever,
    })
}

/// Torque-free-exact rotational update: implicit midpoint on Euler's
/// equations, which conserves rotational kinetic energy.
fn update_angular_velocity(omega: &Vector3<f64>, torque_body: &Vector3<f64>, inertia: &Vector3<f64>, dt: f64) -> Vector3<f64> {
    let mut next = *omega;
    for _ in 0..6 {
        let mid = 0.5 * (omega + next);
        let gyro = mid.cross(&mid.component_mul(inertia));
        next = omega + (torque_body - gyro).component_div(inertia) * dt;
    }
    next
}

fn substep(state: &mut RobotState, setpoints: &[f64], config: &SimConfig, dt: f64, torque_sum: &mut [f64; N_JOINTS]) -> Result<()> {
    let mut force = Vector3::zeros();
    let mut moment = Vector3::zeros();
    let mut updates = Vec::with_capacity(2);
    for foot in Foot::BOTH {
        let i = foot.index();
        let u = update_leg(state, foot, &setpoints[i * 3..i * 3 + 3], config, dt)?;
        force += u.force;
        moment += u.lever.cross(&u.force);
        for j in 0..3 {
            torque_sum[i * 3 + j] += u.torque[j];
        }
        updates.push(u);
    }

    let gravity = Vector3::new(0.0, 0.0, -config.gravity);
    let p = &mut state.pelvis;
    p.linear_velocity += (force / config.pelvis_mass + gravity) * dt;
    let torque_body = p.orientation.inverse_transform_vector(&moment);
    p.angular_velocity = update_angular_velocity(
        &p.angular_velocity,
        &torque_body,
        &Vector3::from(config.pelvis_inertia),
        dt,
    );
    // uniform gravity is integrated exactly; the remaining forces use the
    // updated velocity (symplectic Euler)
    p.position += p.linear_velocity * dt - 0.5 * gravity * dt * dt;
    p.orientation = p.orientation * UnitQuaternion::from_scaled_axis(p.angular_velocity * dt);
    p.orientation.renormalize();

    for (foot, u) in Foot::BOTH.into_iter().zip(updates) {
        let leg = &mut state.legs[foot.index()];
        for j in 0..3 {
            let mut q = leg.joint_positions[j] + u.joint_velocities[j] * dt;
            let mut qd = u.joint_velocities[j];
            if q < config.joint_lower[j] {
                q = config.joint_lower[j];
                qd = qd.max(0.0);
            } else if q > config.joint_upper[j] {
                q = config.joint_upper[j];
                qd = qd.min(0.0);
            }
            leg.joint_positions[j] = q;
            leg.joint_velocities[j] = qd;
        }
    }
    state.time += dt;
    Ok(())
}

/// Advances one policy step by running `policy_dt / inner_dt` PD +
/// integration substeps. Pure in `(state, action, config)`.
pub fn step_physics(state: &RobotState, action: &ActionCommand, config: &SimConfig) -> Result<RobotState> {
    let n = config.substeps()?;
    if action.pd_setpoints.len() != N_JOINTS {
        return Err(Error::config(format!(
            "action has {} setpoints, expected {N_JOINTS}",
            action.pd_setpoints.len()
        )));
    }
    if action.pd_setpoints.iter().any(|v| !v.is_finite()) {
        return Err(Error::SimulationDiverged("non-finite action".into()));
    }
    if !state.is_finite() {
        return Err(Error::SimulationDiverged("non-finite input state".into()));
    }
    let mut next = state.clone();
    let mut torque_sum = [0.0; N_JOINTS];
    for _ in 0..n {
        substep(&mut next, &action.pd_setpoints, config, config.inner_dt, &mut torque_sum)?;
    }
    for (avg, sum) in next.last_torques.iter_mut().zip(torque_sum) {
        *avg = sum / n as f64;
    }
    refresh_feet(&mut next, config);
    if !next.is_finite() || next.pelvis.linear_velocity.norm() > 1e3 {
        return Err(Error::SimulationDiverged(format!(
            "state blew up at t = {:.3} s",
            next.time
        )));
    }
    Ok(next)
}
