use super::*;
use crate::error::Error;
use nalgebra::Vector3;
use proptest::prelude::*;
use rand::Rng;

fn policy_steps(config: &SimConfig, seconds: f64) -> usize {
    (seconds / config.policy_dt).round() as usize
}

fn run(state: &RobotState, action: &ActionCommand, config: &SimConfig, steps: usize) -> RobotState {
    let mut s = state.clone();
    for _ in 0..steps {
        s = step_physics(&s, action, config).unwrap();
    }
    s
}

fn airborne(config: &SimConfig, height: f64) -> RobotState {
    let mut s = reset(0, ResetMode::Nominal, config).unwrap();
    s.pelvis.position.z = height;
    s
}

#[test]
fn free_fall_matches_ballistic_closed_form() {
    let config = SimConfig::default();
    let start = airborne(&config, 10.0);
    let action = ActionCommand::hold(&start);
    let end = run(&start, &action, &config, policy_steps(&config, 1.0));
    let dz = end.pelvis.position.z - start.pelvis.position.z;
    assert!((dz - (-4.905)).abs() < 1e-3, "dz = {dz}");
    assert!((end.time - 1.0).abs() < 1e-9);
}

#[test]
fn standing_contact_supports_body_weight() {
    // Both point feet sit directly under the hips, symmetric about the pelvis
    // centre, so the pose is an equilibrium. At rest the normal springs carry
    // the full weight: 2 * k * delta = m * g.
    let config = SimConfig::default();
    let start = reset(0, ResetMode::Nominal, &config).unwrap();
    let action = ActionCommand::nominal(&config);
    let mut s = start;
    let mut total = 0.0;
    let mut count = 0;
    for i in 0..policy_steps(&config, 3.0) {
        s = step_physics(&s, &action, &config).unwrap();
        if i >= policy_steps(&config, 2.5) {
            total += s.legs.iter().map(|l| l.contact_force.z).sum::<f64>();
            count += 1;
        }
    }
    let weight = config.pelvis_mass * config.gravity;
    let mean = total / count as f64;
    assert!((mean - weight).abs() < 0.02 * weight, "support {mean} vs weight {weight}");
    assert!(s.pelvis.tilt() < 1e-6);
}

#[test]
fn zero_gravity_rest_is_a_fixed_point() {
    let config = SimConfig {
        gravity: 0.0,
        ..Default::default()
    };
    let start = reset(0, ResetMode::Nominal, &config).unwrap();
    let action = ActionCommand::hold(&start);
    let end = step_physics(&start, &action, &config).unwrap();
    assert!((end.pelvis.position - start.pelvis.position).norm() < 1e-12);
    assert!(end.pelvis.linear_velocity.norm() < 1e-12);
    assert!(end.pelvis.angular_velocity.norm() < 1e-12);
    assert!(end.pelvis.orientation.angle_to(&start.pelvis.orientation) < 1e-12);
    for (a, b) in end.legs.iter().zip(&start.legs) {
        for j in 0..3 {
            assert!((a.joint_positions[j] - b.joint_positions[j]).abs() < 1e-12);
            assert!(a.joint_velocities[j].abs() < 1e-12);
        }
    }
}

#[test]
fn passive_energy_is_conserved_in_flight() {
    let config = SimConfig {
        kp: [0.0; 3],
        kd: [0.0; 3],
        joint_damping: [0.0; 3],
        ..Default::default()
    };
    let mut s = airborne(&config, 20.0);
    s.pelvis.linear_velocity = Vector3::new(0.7, -0.4, 2.0);
    s.pelvis.angular_velocity = Vector3::new(0.8, -0.5, 1.1);
    s.legs[0].joint_velocities = [0.05, -0.1, 0.02];
    s.legs[1].joint_velocities = [-0.05, 0.1, -0.02];
    let e0 = mechanical_energy(&s, &config);
    let action = ActionCommand::hold(&s);
    for _ in 0..policy_steps(&config, 1.0) {
        s = step_physics(&s, &action, &config).unwrap();
        assert!(s.legs.iter().all(|l| l.contact_force == Vector3::zeros()));
    }
    let drift = (mechanical_energy(&s, &config) - e0).abs();
    assert!(drift < 1e-3, "energy drift {drift} J");
}

#[test]
fn quaternion_stays_normalized() {
    let config = SimConfig::default();
    let mut s = reset(3, ResetMode::Randomized, &config).unwrap();
    s.pelvis.angular_velocity = Vector3::new(2.0, -1.0, 3.0);
    let action = ActionCommand::nominal(&config);
    for _ in 0..20 {
        s = step_physics(&s, &action, &config).unwrap();
        assert!((s.pelvis.orientation.quaternion().norm() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn stepping_is_deterministic() {
    let config = SimConfig::default();
    let s = reset(11, ResetMode::Randomized, &config).unwrap();
    let action = ActionCommand::new(vec![0.1, 0.2, 0.75, -0.1, -0.3, 0.85]);
    let a = run(&s, &action, &config, 10);
    let b = run(&s, &action, &config, 10);
    assert_eq!(a, b);
}

#[test]
fn bad_actions_are_rejected() {
    let config = SimConfig::default();
    let s = reset(0, ResetMode::Nominal, &config).unwrap();
    assert!(matches!(
        step_physics(&s, &ActionCommand::new(vec![0.0; 5]), &config),
        Err(Error::Config(_))
    ));
    let mut nan = ActionCommand::nominal(&config);
    nan.pd_setpoints[2] = f64::NAN;
    assert!(matches!(
        step_physics(&s, &nan, &config),
        Err(Error::SimulationDiverged(_))
    ));
    let mut broken = s.clone();
    broken.pelvis.linear_velocity.x = f64::INFINITY;
    assert!(matches!(
        step_physics(&broken, &ActionCommand::nominal(&config), &config),
        Err(Error::SimulationDiverged(_))
    ));
}

#[test]
fn joint_limits_hold_under_extreme_setpoints() {
    let config = SimConfig::default();
    let mut s = reset(0, ResetMode::Nominal, &config).unwrap();
    let action = ActionCommand::new(vec![5.0, -5.0, 3.0, -5.0, 5.0, -3.0]);
    for _ in 0..20 {
        s = step_physics(&s, &action, &config).unwrap();
        for leg in &s.legs {
            for j in 0..3 {
                let q = leg.joint_positions[j];
                assert!(q >= config.joint_lower[j] && q <= config.joint_upper[j]);
            }
        }
    }
}

#[test]
fn reset_modes() {
    let config = SimConfig::default();
    let s = reset(5, ResetMode::Nominal, &config).unwrap();
    assert_eq!(s.pelvis.position.z, config.nominal_height());
    assert_eq!(reset(9, ResetMode::Randomized, &config).unwrap(), reset(9, ResetMode::Randomized, &config).unwrap());
    for seed in 0..1000 {
        let s = reset(seed, ResetMode::Randomized, &config).unwrap();
        assert!(s.is_finite());
        assert!((s.pelvis.orientation.quaternion().norm() - 1.0).abs() < 1e-9);
        assert!(s.pelvis.tilt() < 0.1);
        let lowest = s.legs.iter().map(|l| l.foot_position.z).fold(f64::INFINITY, f64::min);
        assert!(lowest.abs() < 1e-9);
    }
}

#[test]
fn contact_and_cone_hold_along_random_rollout() {
    let config = SimConfig::default();
    let mut rng = crate::rng::rng_from(1, &[]);
    let mut s = reset(1, ResetMode::Randomized, &config).unwrap();
    let nominal = ActionCommand::nominal(&config);
    for _ in 0..60 {
        let action = ActionCommand::new(
            nominal.pd_setpoints.iter().map(|v| v + rng.random_range(-0.3..0.3)).collect(),
        );
        s = match step_physics(&s, &action, &config) {
            Ok(s) => s,
            Err(_) => break,
        };
        for leg in &s.legs {
            let f = leg.contact_force;
            assert!(f.z >= 0.0);
            if leg.foot_position.z > config.ground_height {
                assert_eq!(f, Vector3::zeros());
            }
            let ft = (f.x * f.x + f.y * f.y).sqrt();
            assert!(ft <= config.friction * f.z + 1e-9);
        }
    }
}

proptest! {
    #[test]
    fn contact_force_complementarity_and_cone(
        z in -0.05f64..0.05,
        vx in -3.0f64..3.0, vy in -3.0f64..3.0, vz in -3.0f64..3.0,
    ) {
        let config = SimConfig::default();
        let f = contact_force(&Vector3::new(0.0, 0.0, z), &Vector3::new(vx, vy, vz), &config);
        prop_assert!(f.z >= 0.0);
        if f.z > 0.0 {
            prop_assert!(z <= config.ground_height);
        }
        if z > config.ground_height {
            prop_assert_eq!(f, Vector3::zeros());
        }
        prop_assert!((f.x * f.x + f.y * f.y).sqrt() <= config.friction * f.z + 1e-9);
    }
}
