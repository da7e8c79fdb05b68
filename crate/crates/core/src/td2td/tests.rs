use proptest::prelude::*;
use rand::Rng as _;

use super::*;
use crate::env::{LandingRule, ScriptedWalker};
use crate::ppo::ZeroPolicy;
use crate::rng::rng_from;

fn zero() -> ZeroPolicy {
    ZeroPolicy(6)
}

#[test]
fn grid_axes_and_mask() {
    let s = GridSpec::default();
    let xs = s.coordinates();
    assert_eq!(xs.len(), 30);
    assert_eq!((xs[0], xs[29]), (-0.8, 0.8));
    for c in 0..s.cells() {
        let [x, y] = s.cell_center(c);
        assert_eq!(s.is_valid(c), x.hypot(y) <= 0.8);
    }
    assert!(!s.is_valid(0));
    assert!(s.valid_cells().len() < 900);
}

#[test]
fn cell_commands_round_trip() {
    let s = GridSpec::default();
    for c in 0..s.cells() {
        let [x, y] = s.cell_center(c);
        let [x2, y2] = s.command(c).to_cartesian();
        assert!((x - x2).abs() < 1e-12 && (y - y2).abs() < 1e-12);
    }
}

#[test]
fn grid_text_round_trip() {
    let s = GridSpec::default();
    let mut rng = rng_from(1, &[]);
    let mut e: Vec<f64> = (0..900).map(|_| rng.random_range(0.0..0.5)).collect();
    e[s.valid_cells()[3]] = f64::NAN;
    let g = ReachabilityGrid::new(s, e).unwrap();
    let back = ReachabilityGrid::from_text(s, &g.to_text()).unwrap();
    assert_eq!(back.missing_count(), 1);
    for (a, b) in g.errors.iter().zip(&back.errors) {
        assert!(a.is_nan() && b.is_nan() || (a - b).abs() < 1e-9);
    }
}

#[test]
fn grid_rejects_negative_errors_and_bad_size() {
    let s = GridSpec::default();
    assert!(ReachabilityGrid::new(s, vec![-0.1; 900]).is_err());
    assert!(ReachabilityGrid::new(s, vec![0.0; 899]).is_err());
}

#[test]
fn reachable_set_extremes() {
    let s = GridSpec::default();
    let zeros = ReachabilityGrid::filled(s, 0.0).unwrap();
    assert_eq!(reachable_set_size(&zeros, REACHABLE_THRESHOLD), zeros.valid_count());
    let ones = ReachabilityGrid::filled(s, 1.0).unwrap();
    assert_eq!(reachable_set_size(&ones, REACHABLE_THRESHOLD), 0);
}

#[test]
fn reachable_set_matches_double_loop() {
    let s = GridSpec::default();
    let mut rng = rng_from(2, &[]);
    for _ in 0..200 {
        let e: Vec<f64> = (0..900).map(|_| rng.random_range(0.0..0.3)).collect();
        let g = ReachabilityGrid::new(s, e.clone()).unwrap();
        let mut count = 0;
        for i in 0..30 {
            for j in 0..30 {
                let (x, y) = (s.coordinate(i), s.coordinate(j));
                if x.hypot(y) <= 0.8 && e[i * 30 + j] < 0.15 {
                    count += 1;
                }
            }
        }
        assert_eq!(reachable_set_size(&g, 0.15), count);
    }
}

proptest! {
    #[test]
    fn reachable_set_monotone_in_threshold(seed in 0u64..1000, t1 in 0.0f64..0.4, dt in 0.0f64..0.4) {
        let mut rng = rng_from(seed, &[]);
        let e: Vec<f64> = (0..900).map(|_| rng.random_range(0.0..0.5)).collect();
        let g = ReachabilityGrid::new(GridSpec::default(), e).unwrap();
        prop_assert!(reachable_set_size(&g, t1) <= reachable_set_size(&g, t1 + dt));
    }
}

fn small() -> GridSpec {
    GridSpec {
        size: 5,
        ..Default::default()
    }
}

#[test]
fn exact_stub_gives_zero_for_every_cell() {
    let env = ScriptedWalker::new(LandingRule::Exact);
    let s = collect_sample(&env, &zero(), 3, &small()).unwrap().unwrap();
    assert!(s.y.measured().all(|e| e == 0.0));
    assert_eq!(s.y.measured().count(), small().valid_cells().len());
}

#[test]
fn world_offset_stub_reads_offset_everywhere() {
    let env = ScriptedWalker::new(LandingRule::WorldOffset { dx: 0.05, dy: 0.0 });
    for c in small().valid_cells() {
        let (_, e) = collect_episode(&env, &zero(), 4, &small(), c).unwrap().unwrap();
        assert!((e.unwrap() - 0.05).abs() < 1e-12);
    }
}

#[test]
fn recorded_observation_is_shared_across_cells() {
    let env = ScriptedWalker::new(LandingRule::FeatureBowl { scale: 0.1, gain: 0.5 });
    let cells = small().valid_cells();
    let (x1, e1) = collect_episode(&env, &zero(), 8, &small(), cells[0]).unwrap().unwrap();
    let (x2, e2) = collect_episode(&env, &zero(), 8, &small(), cells[cells.len() - 1]).unwrap().unwrap();
    assert_eq!(
        x1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        x2.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
    assert_ne!(e1, e2);
}

#[test]
fn masked_cell_is_rejected() {
    let env = ScriptedWalker::new(LandingRule::Exact);
    assert!(collect_episode(&env, &zero(), 0, &GridSpec::default(), 0).is_err());
}

#[test]
fn dataset_label_counts() {
    let env = ScriptedWalker::new(LandingRule::Exact);
    let full = GridSpec {
        radius: 2.0,
        ..Default::default()
    };
    let (d, rep) = collect_dataset(&env, &zero(), &full, 2, 0, 2, "h").unwrap();
    assert_eq!(d.label_count(), 1800);
    assert_eq!(rep.labels, 1800);
    let (empty, rep) = collect_dataset(&env, &zero(), &full, 0, 0, 1, "h").unwrap();
    assert!(empty.samples.is_empty());
    assert_eq!(rep.labels, 0);
    assert_eq!(label_count(10_000, 900), 9_000_000);
    assert_eq!(DatasetSize::new(10_000, 900, 26).labels, 9_000_000);
}

#[test]
fn dataset_file_round_trip_is_exact() {
    let env = ScriptedWalker::new(LandingRule::FeatureBowl { scale: 0.1, gain: 0.5 });
    let (d, _) = collect_dataset(&env, &zero(), &small(), 3, 1, 1, "abc").unwrap();
    let mut buf = Vec::new();
    d.write_to(&mut buf).unwrap();
    let back = Dataset::read_from(&mut buf.as_slice()).unwrap();
    assert_eq!(back.config_hash, "abc");
    assert_eq!(back.samples.len(), 3);
    for (a, b) in d.samples.iter().zip(&back.samples) {
        assert_eq!((a.seed, a.foot), (b.seed, b.foot));
        assert_eq!(a.speed.to_bits(), b.speed.to_bits());
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.x), bits(&b.x));
        assert_eq!(bits(&a.y.errors), bits(&b.y.errors));
    }
    let mut bad = buf.clone();
    bad[0] = b'X';
    assert!(Dataset::read_from(&mut bad.as_slice()).is_err());
    assert!(Dataset::read_from(&mut &buf[..buf.len() - 3]).is_err());
    let mut extra = buf.clone();
    extra.push(0);
    assert!(Dataset::read_from(&mut extra.as_slice()).is_err());
}

#[test]
fn velocity_bins() {
    let b = bin_by_velocity(&[(0.1, 10), (0.2, 20)], &default_speed_edges());
    assert_eq!(b.len(), 1);
    assert_eq!(b[0].median, 15.0);
    assert!(bin_by_velocity(&[], &default_speed_edges()).is_empty());

    let b = bin_by_velocity(&[(0.1, 1), (0.6, 5), (2.0, 7)], &default_speed_edges());
    assert_eq!(b.iter().map(|x| x.lower).collect::<Vec<_>>(), vec![0.0, 0.5, 1.5]);
    assert_eq!(b[2].upper, f64::INFINITY);
}

#[test]
fn velocity_bin_median_matches_sorting() {
    let mut rng = rng_from(5, &[]);
    let samples: Vec<(f64, usize)> = (0..101).map(|_| (rng.random_range(0.3..0.45), rng.random_range(0..500))).collect();
    let b = bin_by_velocity(&samples, &default_speed_edges());
    assert_eq!(b.len(), 1);
    let mut sizes: Vec<usize> = samples.iter().map(|s| s.1).collect();
    sizes.sort();
    assert_eq!(b[0].median, sizes[50] as f64);
    assert!(b[0].q1 <= b[0].median && b[0].median <= b[0].q3);
}

fn constant_dataset(n: usize) -> Dataset {
    let spec = small();
    let grid: Vec<f64> = (0..spec.cells())
        .map(|c| {
            let [x, y] = spec.cell_center(c);
            0.05 + 0.1 * x.hypot(y)
        })
        .collect();
    let samples = (0..n)
        .map(|k| LabeledSample {
            seed: k as u64,
            foot: crate::clock::Foot::Left,
            speed: 0.0,
            x: vec![0.3, -0.2, 0.1, 0.5],
            y: ReachabilityGrid::new(spec, grid.clone()).unwrap(),
        })
        .collect();
    Dataset {
        obs_dim: 4,
        spec,
        config_hash: String::new(),
        samples,
    }
}

#[test]
fn constant_labels_are_fit() {
    let d = constant_dataset(20);
    let cfg = ModelTrainConfig {
        epochs: 300,
        batch_size: 8,
        learning_rate: 1e-3,
        stem_hidden: 16,
        ..Default::default()
    };
    let (model, rep) = train_model(&d, &cfg).unwrap();
    assert!(rep.test_mse < 1e-4, "{}", rep.test_mse);
    assert_eq!(rep.label_variance, 0.0);
    let p = model.predict_grid(&d.samples[0].x).unwrap();
    assert!(p.errors.iter().zip(&d.samples[0].y.errors).all(|(a, b)| a.is_nan() && b.is_nan() || (a - b).abs() < 0.02));
}

#[test]
fn model_checkpoint_round_trip() {
    let d = constant_dataset(10);
    let cfg = ModelTrainConfig {
        epochs: 2,
        stem_hidden: 8,
        ..Default::default()
    };
    let (model, _) = train_model(&d, &cfg).unwrap();
    let ck = crate::nn::Checkpoint::from_bytes(&model.checkpoint("h").to_bytes()).unwrap();
    let back = ReachabilityModel::from_checkpoint(&ck).unwrap();
    assert_eq!(back, model);
    let a = model.predict_grid(&d.samples[0].x).unwrap();
    let b = back.predict_grid(&d.samples[0].x).unwrap();
    assert_eq!(
        a.errors.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.errors.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}

#[test]
fn split_refuses_empty_side() {
    assert!(split_indices(1, 0.2, 0).is_err());
    assert!(split_indices(10, 0.0, 0).is_err());
    let (a, b) = split_indices(10, 0.2, 0).unwrap();
    assert_eq!((a.len(), b.len()), (8, 2));
    let d = constant_dataset(1);
    assert!(train_model(&d, &ModelTrainConfig::default()).is_err());
}

