use proptest::prelude::*;
use rand::Rng as _;

use super::eval::*;
use super::*;
use crate::env::{LandingRule, ScriptedWalker, SteppingEnv};
use crate::nn::dist::log_prob_graph;
use crate::nn::{Graph, ParamSet, Tensor};
use crate::rng::rng_from;
use crate::td2td::GridSpec;

fn brute_gae(r: &[f64], v: &[f64], boot: f64, g: f64, l: f64) -> Vec<f64> {
    let n = r.len();
    let delta: Vec<f64> = (0..n)
        .map(|t| r[t] + g * if t + 1 < n { v[t + 1] } else { boot } - v[t])
        .collect();
    (0..n)
        .map(|t| (t..n).map(|k| (g * l).powi((k - t) as i32) * delta[k]).sum())
        .collect()
}

#[test]
fn gae_lambda_zero_is_td_residual() {
    let r = [1.0, -0.5, 2.0];
    let v = [0.3, 0.1, -0.2];
    let (a, ret) = compute_gae(&r, &v, 0.7, 0.9, 0.0).unwrap();
    assert_eq!(a[0], 1.0 + 0.9 * 0.1 - 0.3);
    assert_eq!(a[1], -0.5 + 0.9 * -0.2 - 0.1);
    assert_eq!(a[2], 2.0 + 0.9 * 0.7 + 0.2);
    for i in 0..3 {
        assert_eq!(ret[i], a[i] + v[i]);
    }
}

#[test]
fn gae_undiscounted_zero_values_gives_suffix_sums() {
    let r = [1.0, 2.0, 3.0, 4.0];
    let (a, _) = compute_gae(&r, &[0.0; 4], 0.0, 1.0, 1.0).unwrap();
    assert_eq!(a, vec![10.0, 9.0, 7.0, 4.0]);
}

#[test]
fn gae_matches_brute_force() {
    let mut rng = rng_from(3, &[]);
    for _ in 0..100 {
        let r: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let boot = rng.random_range(-1.0..1.0);
        let (g, l) = (rng.random_range(0.8..1.0), rng.random_range(0.0..1.0));
        let (a, _) = compute_gae(&r, &v, boot, g, l).unwrap();
        for (x, y) in a.iter().zip(brute_gae(&r, &v, boot, g, l)) {
            assert!((x - y).abs() < 1e-10);
        }
    }
}

#[test]
fn gae_rejects_length_mismatch() {
    assert!(compute_gae(&[1.0, 2.0], &[0.0], 0.0, 0.99, 0.95).is_err());
}

#[test]
fn clip_uses_bound_for_large_positive_ratio() {
    assert!((clipped_surrogate(1.5, 2.0, 0.2) - 1.2 * 2.0).abs() < 1e-15);
    assert_eq!(clipped_surrogate(0.5, 2.0, 0.2), 1.0);
    assert!((clipped_surrogate(0.5, -2.0, 0.2) - 0.8 * -2.0).abs() < 1e-15);
    assert_eq!(clipped_surrogate(1.5, -2.0, 0.2), -3.0);
}

proptest! {
    #[test]
    fn clipped_never_exceeds_unclipped(ratio in 0.0f64..3.0, adv in -5.0f64..5.0, clip in 0.01f64..0.5) {
        prop_assert!(clipped_surrogate(ratio, adv, clip) <= ratio * adv + 1e-15);
    }
}

#[test]
fn surrogate_gradient_at_unit_ratio_is_policy_gradient() {
    let mut ps = ParamSet::new();
    let means = [0.1, -0.2, 0.3, 0.0];
    let mid = ps.add("mean", Tensor::new(vec![4, 1], means.to_vec()).unwrap());
    let sid = ps.add("log_std", Tensor::filled(&[1, 1], 0.5f64.ln()));
    let actions = Tensor::new(vec![4, 1], vec![0.3, -0.1, 0.0, 0.4]).unwrap();
    let adv = [1.0, -2.0, 0.5, 3.0];
    let old: Vec<f64> = (0..4)
        .map(|i| crate::nn::dist::log_prob(&[means[i]], &[0.5f64.ln()], &[actions.data()[i]]))
        .collect();
    let mut g = Graph::new(&ps);
    let m = g.param(mid);
    let s = g.param(sid);
    let lp = log_prob_graph(&mut g, m, s, &actions).unwrap();
    let obj = surrogate_objective(
        &mut g,
        lp,
        &Tensor::new(vec![4, 1], old).unwrap(),
        &Tensor::new(vec![4, 1], adv.to_vec()).unwrap(),
        &Tensor::filled(&[4, 1], 1.0),
        0.2,
    )
    .unwrap();
    let grads = g.backward(obj).unwrap();
    // d/dm_t of mean_t A_t log N(a_t; m_t, σ²) = A_t (a_t − m_t) / σ² / 4
    for t in 0..4 {
        let hand = adv[t] * (actions.data()[t] - means[t]) / 0.25 / 4.0;
        assert!((grads.get(mid).data()[t] - hand).abs() < 1e-12);
    }
}

fn tiny_config() -> TrainConfig {
    TrainConfig {
        samples_per_iteration: 600,
        hidden: 8,
        layers: 1,
        epochs: 5,
        batch_rollouts: 2,
        ..TrainConfig::desk()
    }
}

fn walker() -> ScriptedWalker {
    ScriptedWalker::new(LandingRule::RadialShort { distance: 0.05 })
}

fn prepared_rollouts(ac: &ActorCritic, cfg: &TrainConfig) -> Vec<Rollout> {
    let mut rs = collect_rollouts(&walker(), ac, 5, 200, 50, 1).unwrap();
    update::prepare_advantages(&mut rs, cfg).unwrap();
    rs
}

#[test]
fn injected_kl_stops_after_first_epoch() {
    let cfg = tiny_config();
    let mut ac = ActorCritic::new(crate::env::OBS_DIM, 6, &cfg, 1).unwrap();
    let rs = prepared_rollouts(&ac, &cfg);
    let mut a = crate::nn::Adam::new(cfg.adam(), ac.actor.params());
    let mut c = crate::nn::Adam::new(cfg.adam(), ac.critic.params());
    let mut inject = |epoch: usize, measured: f64| if epoch == 1 { 0.03 } else { measured };
    let stats = ppo_update(&mut ac, &mut a, &mut c, &rs, &cfg, &mut rng_from(0, &[]), Some(&mut inject)).unwrap();
    assert_eq!(stats.epochs_run, 1);
    assert_eq!(stats.kl_at_stop, 0.03);
}

#[test]
fn kl_at_threshold_does_not_stop() {
    let cfg = tiny_config();
    let mut ac = ActorCritic::new(crate::env::OBS_DIM, 6, &cfg, 1).unwrap();
    let rs = prepared_rollouts(&ac, &cfg);
    let mut a = crate::nn::Adam::new(cfg.adam(), ac.actor.params());
    let mut c = crate::nn::Adam::new(cfg.adam(), ac.critic.params());
    let mut at = |_: usize, _: f64| 0.02;
    let stats = ppo_update(&mut ac, &mut a, &mut c, &rs, &cfg, &mut rng_from(0, &[]), Some(&mut at)).unwrap();
    assert_eq!(stats.epochs_run, 5);
    assert_eq!(stats.kl_per_epoch.len(), 5);
}

#[test]
fn measured_kl_is_zero_before_any_change() {
    let cfg = tiny_config();
    let ac = ActorCritic::new(crate::env::OBS_DIM, 6, &cfg, 1).unwrap();
    let rs = prepared_rollouts(&ac, &cfg);
    assert!(mean_kl(&ac, &rs, &ac.log_std()).unwrap().abs() < 1e-12);
}

#[test]
fn non_finite_loss_restores_snapshot() {
    let cfg = tiny_config();
    let mut ac = ActorCritic::new(crate::env::OBS_DIM, 6, &cfg, 1).unwrap();
    let mut rs = prepared_rollouts(&ac, &cfg);
    rs[0].returns[0] = f64::NAN;
    let before = ac.clone();
    let mut a = crate::nn::Adam::new(cfg.adam(), ac.actor.params());
    let mut c = crate::nn::Adam::new(cfg.adam(), ac.critic.params());
    let a0 = a.clone();
    let stats = ppo_update(&mut ac, &mut a, &mut c, &rs, &cfg, &mut rng_from(0, &[]), None).unwrap();
    assert!(stats.restored);
    assert_eq!(ac, before);
    assert_eq!(a, a0);
}

#[test]
fn update_changes_policy_and_reduces_value_loss() {
    let cfg = TrainConfig {
        learning_rate: 1e-2,
        kl_stop: f64::INFINITY,
        ..tiny_config()
    };
    let mut ac = ActorCritic::new(crate::env::OBS_DIM, 6, &cfg, 1).unwrap();
    let rs = prepared_rollouts(&ac, &cfg);
    let mut a = crate::nn::Adam::new(cfg.adam(), ac.actor.params());
    let mut c = crate::nn::Adam::new(cfg.adam(), ac.critic.params());
    let first = ppo_update(&mut ac, &mut a, &mut c, &rs, &cfg, &mut rng_from(0, &[]), None).unwrap();
    let second = ppo_update(&mut ac, &mut a, &mut c, &rs, &cfg, &mut rng_from(1, &[]), None).unwrap();
    assert!(second.value_loss < first.value_loss);
    assert!(first.kl_at_stop > 0.0);
}

#[test]
fn rollout_count_covers_sample_budget() {
    let cfg = tiny_config();
    let ac = ActorCritic::new(crate::env::OBS_DIM, 6, &cfg, 1).unwrap();
    let rs = collect_rollouts(&walker(), &ac, 1, 600, 300, 1).unwrap();
    assert!(rs.len() >= 2);
    assert!(rs.iter().map(|r| r.len()).sum::<usize>() >= 600);
    for r in &rs {
        r.check_consistent().unwrap();
        assert!(r.len() <= 300);
    }
}

#[test]
fn collection_is_deterministic_per_seed_and_workers() {
    let cfg = tiny_config();
    let ac = ActorCritic::new(crate::env::OBS_DIM, 6, &cfg, 1).unwrap();
    for workers in [1, 3] {
        let a = collect_rollouts(&walker(), &ac, 9, 500, 100, workers).unwrap();
        let b = collect_rollouts(&walker(), &ac, 9, 500, 100, workers).unwrap();
        assert_eq!(rollout_checksum(&a), rollout_checksum(&b));
    }
    let c = collect_rollouts(&walker(), &ac, 10, 500, 100, 1).unwrap();
    let a = collect_rollouts(&walker(), &ac, 9, 500, 100, 1).unwrap();
    assert_ne!(rollout_checksum(&a), rollout_checksum(&c));
}

#[test]
fn normalizer_merge_matches_pooled_statistics() {
    let mut rng = rng_from(2, &[]);
    let rows: Vec<Vec<f64>> = (0..50).map(|_| vec![rng.random_range(-2.0..3.0), rng.random_range(0.0..1.0)]).collect();
    let mut n = ObsNormalizer::new(2);
    n.update(rows[..20].iter().map(|r| r.as_slice()));
    n.update(rows[20..].iter().map(|r| r.as_slice()));
    for d in 0..2 {
        let m = rows.iter().map(|r| r[d]).sum::<f64>() / 50.0;
        let v = rows.iter().map(|r| (r[d] - m).powi(2)).sum::<f64>() / 50.0;
        assert!((n.mean[d] - m).abs() < 1e-12);
        assert!((n.var[d] - v).abs() < 1e-12);
    }
}

#[test]
fn presets_carry_stated_values() {
    let p = TrainConfig::full();
    assert_eq!(
        (p.samples_per_iteration, p.batch_rollouts, p.epochs, p.learning_rate, p.kl_stop),
        (50_000, 64, 5, 5e-4, 0.02)
    );
    assert_eq!((p.hidden, p.layers), (128, 2));
    let d = TrainConfig::desk();
    assert_eq!((d.samples_per_iteration, d.hidden), (4_000, 64));
    p.validate().unwrap();
}

fn zero() -> ZeroPolicy {
    ZeroPolicy(6)
}

fn small_grid() -> GridSpec {
    GridSpec {
        size: 6,
        ..Default::default()
    }
}

#[test]
fn constant_map_on_exact_stub_is_zero() {
    let g = constant_command_map(&ScriptedWalker::new(LandingRule::Exact), &zero(), &small_grid(), 20, 0, 2).unwrap();
    assert!(g.measured().all(|e| e == 0.0));
    assert_eq!(g.measured().count(), g.valid_count());
}

#[test]
fn constant_map_on_short_stub_reads_offset() {
    let env = ScriptedWalker::new(LandingRule::RadialShort { distance: 0.1 });
    let g = constant_command_map(&env, &zero(), &small_grid(), 20, 0, 1).unwrap();
    assert_eq!(g.measured().count(), g.valid_count());
    assert!(g.measured().all(|e| (e - 0.1).abs() < 1e-9));
}

#[test]
fn increments_stay_in_range() {
    let limits = IncrementLimits::default();
    for cat in IncrementCategory::standard() {
        let seq = increment_sequence(&cat, &limits, 25_000, 4).unwrap();
        let mut prev = limits.start;
        for c in seq {
            assert!(c.l_step >= 0.01 && c.l_step <= 0.8);
            assert!((c.l_step - prev.l_step).abs() <= cat.length + 1e-12);
            assert!((c.theta_step - prev.theta_step).abs() <= cat.angle_deg.to_radians() + 1e-12);
            prev = c;
        }
    }
}

#[test]
fn zero_increment_range_is_constant() {
    let limits = IncrementLimits::default();
    let seq = increment_sequence(&IncrementCategory::new(0.0, 0.0), &limits, 50, 1).unwrap();
    assert!(seq.iter().all(|c| *c == limits.start));
}

#[test]
fn increments_on_exact_stub_are_zero_for_every_category() {
    let env = ScriptedWalker::new(LandingRule::Exact);
    let cats = IncrementCategory::standard();
    let table = random_increments_table(&env, &zero(), &cats, &IncrementLimits::default(), 200, 3, 2).unwrap();
    assert_eq!(table.len(), 12);
    for row in table {
        assert_eq!(row.footsteps, 200);
        assert_eq!((row.mean_error, row.std_error), (Some(0.0), Some(0.0)));
    }
}

#[test]
fn category_labels_name_both_ranges() {
    let labels: Vec<String> = IncrementCategory::standard().into_iter().map(|c| c.label).collect();
    assert_eq!(labels, ["±0.3m, ±0°", "±0.3m, ±20°", "±0.7m, ±0°", "±0.7m, ±20°"]);
}

#[test]
fn scripted_sequence_reports_every_step() {
    let env = ScriptedWalker::new(LandingRule::RadialShort { distance: 0.05 });
    let rep = scripted_sequence(&env, &zero(), &SEQUENCE_LEFT, &SEQUENCE_RIGHT, 0).unwrap();
    assert_eq!(rep.rows.len(), 8);
    assert!(!rep.fell);
    let per_foot = |f: crate::clock::Foot| -> Vec<f64> {
        rep.rows.iter().filter(|r| r.foot == f).map(|r| r.command.l_step).collect()
    };
    assert_eq!(per_foot(crate::clock::Foot::Left), SEQUENCE_LEFT);
    assert_eq!(per_foot(crate::clock::Foot::Right), SEQUENCE_RIGHT);
    for r in &rep.rows {
        assert!((r.error - 0.05).abs() < 1e-9);
        assert!((r.realized.l_step - (r.command.l_step - 0.05)).abs() < 1e-9);
    }
}

#[test]
fn episode_runner_reports_touchdowns() {
    let mut env = walker();
    let s = run_episode(&mut env, &mut zero(), 0, 300).unwrap();
    assert_eq!(s.steps, 300);
    assert!(!s.fell);
    assert!(s.step_errors.len() >= 18);
    assert_eq!(env.observation_dim(), crate::env::OBS_DIM);
}
