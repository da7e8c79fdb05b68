use std::time::Duration;

use super::*;
use crate::clock::GammaKind;
use crate::command::alternating_script;
use crate::env::{LandingRule, ScriptedWalker};
use crate::ppo::ZeroPolicy;
use crate::td2td::{collect_dataset, train_model, GridSpec, ModelTrainConfig};

fn session(rule: LandingRule) -> ServeSession<ScriptedWalker> {
    ServeSession::new(ScriptedWalker::new(rule), Box::new(ZeroPolicy(6)), None, 0.025, 3).unwrap()
}

fn run_until<E: SteppingEnv>(s: &mut ServeSession<E>, pred: impl Fn(&StreamFrame) -> bool) -> Vec<StreamFrame> {
    let mut out = Vec::new();
    for _ in 0..400 {
        let f = s.tick().unwrap().unwrap();
        let done = pred(&f);
        out.push(f);
        if done {
            return out;
        }
    }
    panic!("condition never met");
}

#[test]
fn queued_footstep_activates_at_that_feet_next_touchdown() {
    let mut s = session(LandingRule::Exact);
    let cmd = FootstepCommand::new(0.5, 0.0);
    let replies = s.handle(ClientMessage::SetNextFootstep {
        foot: Some(Foot::Left),
        l_step: Some(0.5),
        theta_step: Some(0.0),
        x: None,
        y: None,
    });
    assert!(replies.is_empty());
    let frames = run_until(&mut s, |f| f.touchdown.is_some_and(|t| t.foot == Foot::Left));
    let (last, before) = frames.split_last().unwrap();
    for f in before {
        assert_ne!(f.feet[0].active_command, cmd);
        assert_eq!(f.feet[0].pending_command, Some(cmd));
    }
    assert_eq!(last.feet[0].active_command, cmd);
    assert_eq!(last.feet[0].pending_command, None);
    assert_eq!(last.touchdown.unwrap().next_command, cmd);
    assert_ne!(last.feet[1].active_command, cmd);
}

#[test]
fn last_command_before_touchdown_wins() {
    let mut s = session(LandingRule::Exact);
    for l in [0.2, 0.3, 0.4] {
        s.handle(ClientMessage::SetNextFootstep {
            foot: Some(Foot::Right),
            l_step: Some(l),
            theta_step: None,
            x: None,
            y: None,
        });
    }
    let frames = run_until(&mut s, |f| f.touchdown.is_some_and(|t| t.foot == Foot::Right));
    assert_eq!(frames.last().unwrap().feet[1].active_command, FootstepCommand::new(0.4, 0.0));
}

#[test]
fn world_point_left_of_target_is_quarter_turn() {
    let mut s = session(LandingRule::Exact);
    let t = s.env().tracker().target(Foot::Left);
    s.handle(ClientMessage::SetNextFootstep {
        foot: Some(Foot::Left),
        l_step: None,
        theta_step: None,
        x: Some(t[0]),
        y: Some(t[1] + 0.5),
    });
    let p = s.env().tracker().pending(Foot::Left).unwrap();
    assert!((p.l_step - 0.5).abs() < 1e-12);
    assert!((p.theta_step - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
}

#[test]
fn malformed_messages_are_rejected_without_side_effects() {
    let mut s = session(LandingRule::Exact);
    let before = s.env().gait().clone();
    for bad in [
        "not json",
        r#"{"type":"warp"}"#,
        r#"{"v":2,"type":"pause"}"#,
        r#"{"type":"set_next_footstep","l_step":0.3,"x":1.0,"y":0.0}"#,
        r#"{"type":"set_next_footstep","l_step":1.5}"#,
        r#"{"type":"set_ratio","ratio":1.2}"#,
        r#"{"type":"reachability"}"#,
    ] {
        let r = s.handle_text(bad);
        assert!(matches!(r.as_slice(), [ServerMessage::Error { .. }]), "{bad}: {r:?}");
    }
    assert_eq!(s.env().gait(), &before);
    assert!(!s.is_paused());
    assert_eq!(s.tick().unwrap().unwrap().seq, 1);
}

#[test]
fn pause_stops_frames_and_resume_keeps_time_monotone() {
    let mut s = session(LandingRule::Exact);
    let a = s.tick().unwrap().unwrap();
    s.handle_text(r#"{"type":"pause"}"#);
    for _ in 0..5 {
        assert!(s.tick().unwrap().is_none());
    }
    s.handle_text(r#"{"v":1,"type":"resume"}"#);
    let b = s.tick().unwrap().unwrap();
    assert_eq!(b.seq, a.seq + 1);
    assert!(b.timestamp > a.timestamp);
}

#[test]
fn reset_keeps_timestamps_monotone() {
    let mut s = session(LandingRule::Exact);
    let a = s.tick().unwrap().unwrap();
    s.handle_text(r#"{"type":"reset","seed":9}"#);
    let b = s.tick().unwrap().unwrap();
    assert_eq!(b.episode, a.episode + 1);
    assert!(b.timestamp > a.timestamp);
}

#[test]
fn gamma_schedule_and_ratio_messages() {
    let mut s = session(LandingRule::Exact);
    s.handle_text(r#"{"type":"set_gamma_schedule","kind":"linear"}"#);
    s.handle_text(r#"{"type":"set_ratio","ratio":0.4}"#);
    assert_eq!(s.env().gait().schedule.kind, GammaKind::Linear);
    let frames = run_until(&mut s, |f| f.touchdown.is_some());
    let last = frames.last().unwrap();
    assert_eq!(last.gamma_schedule, GammaKind::Linear);
    assert_eq!(last.feet[0].ratio, 0.4);
    assert_eq!(last.feet[1].ratio, 0.4);
}

#[test]
fn swing_foot_selection() {
    let mut c = ClockState::default();
    c.phi = 0.1;
    assert_eq!(swing_foot(&c), Foot::Left);
    c.phi = 0.6;
    assert_eq!(swing_foot(&c), Foot::Right);
    // Both in stance: left at local phase 0.47, right at 0.97 lifts next.
    c.phi = 0.47;
    assert_eq!(swing_foot(&c), Foot::Right);
    c.phi = 0.98;
    assert_eq!(swing_foot(&c), Foot::Left);
}

#[test]
fn frames_round_trip_through_json_exactly() {
    let mut s = session(LandingRule::WorldOffset { dx: 0.05, dy: 0.0 });
    let frames = run_until(&mut s, |f| f.touchdown.is_some());
    for f in frames {
        let text = ServerMessage::Frame(f.clone()).to_json();
        assert!(text.starts_with(r#"{"v":1,"type":"frame""#), "{text}");
        match ServerMessage::from_json(&text).unwrap() {
            ServerMessage::Frame(back) => assert_eq!(back, f),
            other => panic!("{other:?}"),
        }
    }
}

#[test]
fn reachability_reply_matches_decoder() {
    let env = ScriptedWalker::new(LandingRule::FeatureBowl { scale: 0.1, gain: 0.5 });
    let spec = GridSpec {
        size: 6,
        ..Default::default()
    };
    let (d, _) = collect_dataset(&env, &ZeroPolicy(6), &spec, 4, 0, 1, "").unwrap();
    let cfg = ModelTrainConfig {
        epochs: 2,
        stem_hidden: 8,
        ..Default::default()
    };
    let (model, _) = train_model(&d, &cfg).unwrap();
    let mut s = ServeSession::new(env, Box::new(ZeroPolicy(6)), Some(model.clone()), 0.025, 1).unwrap();
    for _ in 0..7 {
        s.tick().unwrap();
    }
    let reply = s.handle_text(r#"{"type":"reachability"}"#);
    let raw = model.predict_raw(&[s.observation()]).unwrap().into_data();
    let text = reply[0].to_json();
    let ServerMessage::Reachability { errors, grid, .. } = ServerMessage::from_json(&text).unwrap() else {
        panic!("{text}")
    };
    assert_eq!(grid, spec);
    for (c, e) in errors.iter().enumerate() {
        match e {
            Some(v) => assert_eq!(v.to_bits(), raw[c].to_bits()),
            None => assert!(!spec.is_valid(c)),
        }
    }
}

#[test]
fn replay_executes_script_in_order() {
    let mut s = session(LandingRule::RadialShort { distance: 0.05 });
    let script = alternating_script(&[0.1, 0.5, 0.7, 0.4], &[0.3, 0.7, 0.5, 0.2]);
    let frames = replay(&mut s, &script, 2000).unwrap();
    let flown: Vec<(Foot, f64, f64)> = frames
        .iter()
        .filter_map(|f| f.touchdown)
        .map(|t| (t.foot, t.command.l_step, t.error))
        .collect();
    for (foot, seq) in [(Foot::Left, [0.1, 0.5, 0.7, 0.4]), (Foot::Right, [0.3, 0.7, 0.5, 0.2])] {
        let steps: Vec<(f64, f64)> = flown.iter().filter(|t| t.0 == foot).map(|t| (t.1, t.2)).collect();
        let pos = steps.iter().position(|s| s.0 == seq[0]).unwrap();
        let tail = &steps[pos..];
        assert_eq!(tail.len(), 4, "{foot:?} {steps:?}");
        for (k, &(l, e)) in tail.iter().enumerate() {
            assert_eq!(l, seq[k]);
            assert!((e - 0.05).abs() < 1e-9);
        }
    }
}

#[test]
fn run_loop_answers_and_streams() {
    use std::sync::mpsc::channel;
    let mut s = session(LandingRule::Exact);
    let (to_sim, inbox) = channel();
    let (outbox, from_sim) = channel();
    to_sim.send("garbage".to_string()).unwrap();
    let stop = AtomicBool::new(false);
    let mut pacer = Pacer::new(Duration::from_millis(1), false);
    let exit = run_loop(&mut s, &mut pacer, &inbox, &outbox, &stop, Some(5)).unwrap();
    assert_eq!(exit, LoopExit::StepLimit);
    let msgs: Vec<ServerMessage> = from_sim.try_iter().map(|t| ServerMessage::from_json(&t).unwrap()).collect();
    assert!(matches!(msgs[0], ServerMessage::Error { .. }));
    assert_eq!(msgs.iter().filter(|m| matches!(m, ServerMessage::Frame(_))).count(), 5);
    drop(to_sim);
    assert_eq!(
        run_loop(&mut s, &mut pacer, &inbox, &outbox, &stop, None).unwrap(),
        LoopExit::InboxClosed
    );
}

#[test]
fn jitter_stats_arithmetic() {
    let j = JitterStats::from_intervals(&[0.025, 0.026, 0.024, 0.030], 0.025);
    assert!((j.max_abs_deviation - 0.005).abs() < 1e-15);
    assert!((j.mean - 0.02625).abs() < 1e-15);
    assert!((j.relative_jitter() - 0.2).abs() < 1e-12);
    assert_eq!(JitterStats::from_intervals(&[], 0.025).count, 0);
}

#[test]
fn pacer_holds_period() {
    let mut p = Pacer::new(Duration::from_millis(10), true);
    for _ in 0..21 {
        p.wait();
    }
    let st = p.stats();
    assert_eq!(st.count, 20);
    assert!((st.mean - 0.010).abs() < 0.003, "{st:?}");
}
