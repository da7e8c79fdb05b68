use super::*;
use crate::clock::{linear_gamma, Foot, GammaKind};
use crate::command::RandomizationRanges;

fn zero_action() -> Vec<f64> {
    vec![0.0; ACTION_DIM]
}

#[test]
fn observation_layout() {
    assert_eq!(OBS_DIM, 26);
    assert_eq!(observation_dim(10), 34);
    let env = FootstepEnv::new(EnvConfig::default()).unwrap();
    let o = env.observation();
    assert_eq!(o.len(), OBS_DIM);
    assert_eq!(obs_index::COMMAND + 2, OBS_DIM);
    let q = &o[obs_index::ORIENTATION..obs_index::ORIENTATION + 4];
    assert!((q.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
    let cmd = env.tracker().observed_command();
    assert_eq!(o[obs_index::COMMAND], cmd.l_step);
    assert_eq!(o[obs_index::COMMAND + 1], cmd.theta_step);
    assert_eq!(o[obs_index::CLOCK..obs_index::CLOCK + 2], [0.0, 1.0]);
}

#[test]
fn nominal_rollout_touchdown_count_and_alternation() {
    let mut w = ScriptedWalker::new(LandingRule::Exact);
    let mut feet = Vec::new();
    for _ in 0..300 {
        if let Some(td) = w.step(&zero_action()).unwrap().touchdown {
            feet.push(td.foot);
        }
    }
    for foot in Foot::BOTH {
        let n = feet.iter().filter(|&&f| f == foot).count();
        assert!((9..=11).contains(&n), "{foot}: {n} touchdowns");
    }
    assert!(feet.windows(2).all(|p| p[0] != p[1]));
}

#[test]
fn sparse_reward_only_at_touchdowns() {
    let mut env = FootstepEnv::new(EnvConfig::default()).unwrap();
    env.reset(4).unwrap();
    for _ in 0..120 {
        let out = env.step(&zero_action()).unwrap();
        assert_eq!(out.touchdown.is_some(), out.breakdown.sparse_step.is_some());
        if out.done() {
            break;
        }
    }
}

#[test]
fn active_command_changes_only_at_touchdown() {
    let config = EnvConfig {
        ranges: RandomizationRanges {
            probability: 0.2,
            ..Default::default()
        },
        ..Default::default()
    };
    let mut env = FootstepEnv::new(config).unwrap();
    env.reset(1).unwrap();
    let mut prev = [env.tracker().active(Foot::Left), env.tracker().active(Foot::Right)];
    let mut changes = 0;
    for _ in 0..300 {
        let out = env.step(&zero_action()).unwrap();
        for foot in Foot::BOTH {
            let now = env.tracker().active(foot);
            if now != prev[foot.index()] {
                assert_eq!(out.touchdown.map(|t| t.foot), Some(foot));
                changes += 1;
            }
            prev[foot.index()] = now;
        }
        if out.done() {
            break;
        }
    }
    assert!(changes > 0);
}

#[test]
fn randomization_rate_matches_probability() {
    let mut w = ScriptedWalker::new(LandingRule::Exact).with_randomization(RandomizationRanges::default());
    w.set_horizon(usize::MAX);
    let n = 100_000;
    let count = (0..n).filter(|_| w.step(&zero_action()).unwrap().randomized).count() as f64;
    let p = 1.0 / 50.0;
    let sigma = (n as f64 * p * (1.0 - p)).sqrt();
    assert!((count - 2000.0).abs() < 3.0 * sigma, "{count}");
}

#[test]
fn zero_probability_keeps_control_constant() {
    let ranges = RandomizationRanges {
        probability: 0.0,
        ..Default::default()
    };
    let mut w = ScriptedWalker::new(LandingRule::Exact).with_randomization(ranges);
    let start = w.clock().clone();
    let cmd = w.tracker().observed_command();
    for _ in 0..300 {
        let out = w.step(&zero_action()).unwrap();
        assert!(!out.randomized);
        assert_eq!(w.clock().ratios, start.ratios);
        assert_eq!(w.clock().gamma, start.gamma);
        assert_eq!(w.tracker().observed_command(), cmd);
    }
}

#[test]
fn scripted_landing_rules() {
    for (rule, expect) in [
        (LandingRule::Exact, 0.0),
        (LandingRule::WorldOffset { dx: 0.05, dy: 0.0 }, 0.05),
        (LandingRule::RadialShort { distance: 0.1 }, 0.1),
    ] {
        let mut w = ScriptedWalker::new(rule).with_initial_command(crate::command::FootstepCommand::new(0.4, 0.3));
        let mut seen = 0;
        for _ in 0..200 {
            if let Some(td) = w.step(&zero_action()).unwrap().touchdown {
                assert!((td.error - expect).abs() < 1e-12, "{rule:?}: {}", td.error);
                seen += 1;
            }
        }
        assert!(seen > 5);
    }
}

#[test]
fn linear_schedule_sets_gamma_from_upcoming_step() {
    let mut w = ScriptedWalker::new(LandingRule::Exact).with_initial_command(crate::command::FootstepCommand::new(0.4, 0.0));
    let sched = crate::clock::GammaSchedule::with_kind(GammaKind::Linear);
    w.set_gamma_schedule(sched);
    while w.step(&zero_action()).unwrap().touchdown.is_none() {}
    assert!((w.clock().gamma - linear_gamma(0.4, &sched).unwrap()).abs() < 1e-15);
}

#[test]
fn env_is_deterministic_per_seed() {
    let mut a = FootstepEnv::new(EnvConfig::default()).unwrap();
    let mut b = a.clone();
    a.reset(9).unwrap();
    b.reset(9).unwrap();
    let act: Vec<f64> = (0..ACTION_DIM).map(|i| 0.05 * i as f64 - 0.1).collect();
    for _ in 0..40 {
        assert_eq!(a.step(&act).unwrap(), b.step(&act).unwrap());
    }
    assert!(a.step(&[0.0; 3]).is_err());
}

#[test]
fn standing_still_scores_dense_terms_in_range() {
    let config = EnvConfig {
        task: TaskKind::Constant {
            l_step: 0.0,
            theta_step: 0.0,
        },
        reset_mode: crate::sim::ResetMode::Nominal,
        dynamics_randomization: false,
        ..Default::default()
    };
    let mut env = FootstepEnv::new(config).unwrap();
    env.reset(0).unwrap();
    let out = env.step(&zero_action()).unwrap();
    for (i, v) in out.breakdown.dense_terms().iter().enumerate() {
        if i != 8 {
            assert!((0.0..=1.0).contains(v));
        }
    }
    assert!(!out.terminal);
}
