use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::actor_critic::ActorCritic;
use super::rollout::{collect_rollouts, rollout_checksum, Rollout};
use super::update::{ppo_update, prepare_advantages, KlProbe, UpdateStats};
use super::TrainConfig;
use crate::env::SteppingEnv;
use crate::error::{Error, Result};
use crate::nn::{Adam, Checkpoint};
use crate::reward::BREAKDOWN_COLUMNS;
use crate::rng::{derive_seed, rng_from};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const BREAKDOWN_FILE: &str = "reward_breakdown.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const LATEST_CHECKPOINT: &str = "latest.ckpt";

/// One line of the metrics log. Contains no wall-clock data so that runs
/// are byte-comparable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub samples: usize,
    pub total_samples: usize,
    pub rollouts: usize,
    pub mean_return: f64,
    pub mean_episode_length: f64,
    /// Mean touchdown error over the iteration; absent when no foot landed.
    pub mean_step_error: Option<f64>,
    pub falls: usize,
    pub diverged: usize,
    pub kl_at_stop: f64,
    pub epochs_run: usize,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub restored: bool,
    pub rollout_checksum: String,
    pub config_hash: String,
    /// Per-step mean of every reward term, in breakdown column order.
    pub reward_terms: Vec<f64>,
}

/// Network layout stored in every policy checkpoint header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyHeader {
    pub kind: String,
    pub iteration: usize,
    pub total_samples: usize,
    pub obs_dim: usize,
    pub action_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub init_std: f64,
    pub normalize_observations: bool,
    pub seed: u64,
    pub workers: usize,
    pub actor_adam_step: u64,
    pub critic_adam_step: u64,
}

pub const POLICY_KIND: &str = "policy";

impl PolicyHeader {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let h: PolicyHeader = serde_json::from_value(ck.header.clone())
            .map_err(|e| Error::format(format!("policy header: {e}")))?;
        if h.kind != POLICY_KIND {
            return Err(Error::format(format!("expected a policy checkpoint, found {:?}", h.kind)));
        }
        Ok(h)
    }
}

/// Rebuilds the actor-critic stored in a policy checkpoint.
pub fn load_policy(ck: &Checkpoint) -> Result<ActorCritic> {
    let h = PolicyHeader::from_checkpoint(ck)?;
    let cfg = TrainConfig {
        hidden: h.hidden,
        layers: h.layers,
        init_std: h.init_std,
        normalize_observations: h.normalize_observations,
        ..TrainConfig::default()
    };
    let mut ac = ActorCritic::new(h.obs_dim, h.action_dim, &cfg, 0)?;
    ac.read_from(ck)?;
    Ok(ac)
}

fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Iteration loop around [`collect_rollouts`] and [`ppo_update`].
///
/// Every random draw of iteration `i` is derived from `(seed, i)`, so a run
/// resumed from a checkpoint reproduces the uninterrupted run exactly.
pub struct Trainer<E> {
    pub env: E,
    pub ac: ActorCritic,
    pub actor_opt: Adam,
    pub critic_opt: Adam,
    pub config: TrainConfig,
    pub seed: u64,
    pub workers: usize,
    /// Maximum policy steps per rollout.
    pub horizon: usize,
    /// Iterations completed so far.
    pub iteration: usize,
    pub total_samples: usize,
    pub config_hash: String,
}

impl<E: SteppingEnv + Clone + Sync> Trainer<E> {
    pub fn new(env: E, config: TrainConfig, seed: u64, workers: usize, horizon: usize, config_hash: impl Into<String>) -> Result<Self> {
        config.validate()?;
        if workers == 0 {
            return Err(Error::config("workers must be positive"));
        }
        let ac = ActorCritic::new(env.observation_dim(), env.action_dim(), &config, derive_seed(seed, &[0x1417]))?;
        let actor_opt = Adam::new(config.adam(), ac.actor.params());
        let critic_opt = Adam::new(config.adam(), ac.critic.params());
        Ok(Trainer {
            env,
            ac,
            actor_opt,
            critic_opt,
            config,
            seed,
            workers,
            horizon,
            iteration: 0,
            total_samples: 0,
            config_hash: config_hash.into(),
        })
    }

    /// Rollouts the next iteration would train on.
    pub fn collect(&self) -> Result<Vec<Rollout>> {
        collect_rollouts(
            &self.env,
            &self.ac,
            derive_seed(self.seed, &[self.iteration as u64, 0x5A]),
            self.config.samples_per_iteration,
            self.horizon,
            self.workers,
        )
    }

    /// Collect, update, and report one iteration.
    pub fn iterate(&mut self, probe: Option<&mut dyn KlProbe>) -> Result<IterationMetrics> {
        let mut rollouts = self.collect()?;
        for r in &rollouts {
            r.check_consistent()?;
        }
        prepare_advantages(&mut rollouts, &self.config)?;
        let mut rng = rng_from(self.seed, &[self.iteration as u64, 0xB7]);
        let stats = ppo_update(
            &mut self.ac,
            &mut self.actor_opt,
            &mut self.critic_opt,
            &rollouts,
            &self.config,
            &mut rng,
            probe,
        )?;
        if let Some(n) = &mut self.ac.normalizer {
            n.update(rollouts.iter().flat_map(|r| r.observations.iter().map(|o| o.as_slice())));
        }
        let metrics = self.metrics(&rollouts, &stats);
        self.iteration += 1;
        self.total_samples = metrics.total_samples;
        Ok(metrics)
    }

    fn metrics(&self, rollouts: &[Rollout], stats: &UpdateStats) -> IterationMetrics {
        let samples: usize = rollouts.iter().map(|r| r.len()).sum();
        let mut terms = vec![0.0; BREAKDOWN_COLUMNS.len()];
        for b in rollouts.iter().flat_map(|r| &r.breakdowns) {
            for (acc, v) in terms.iter_mut().zip(b.columns()) {
                *acc += v;
            }
        }
        for t in &mut terms {
            *t /= samples.max(1) as f64;
        }
        IterationMetrics {
            iteration: self.iteration,
            samples,
            total_samples: self.total_samples + samples,
            rollouts: rollouts.len(),
            mean_return: mean(rollouts.iter().map(|r| r.total_reward())).unwrap_or(0.0),
            mean_episode_length: samples as f64 / rollouts.len().max(1) as f64,
            mean_step_error: mean(rollouts.iter().flat_map(|r| r.step_errors.iter().copied())),
            falls: rollouts.iter().filter(|r| r.terminal).count(),
            diverged: rollouts.iter().filter(|r| r.diverged).count(),
            kl_at_stop: stats.kl_at_stop,
            epochs_run: stats.epochs_run,
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            entropy: stats.entropy,
            restored: stats.restored,
            rollout_checksum: rollout_checksum(rollouts),
            config_hash: self.config_hash.clone(),
            reward_terms: terms,
        }
    }

    pub fn header(&self) -> PolicyHeader {
        PolicyHeader {
            kind: POLICY_KIND.into(),
            iteration: self.iteration,
            total_samples: self.total_samples,
            obs_dim: self.ac.obs_dim(),
            action_dim: self.ac.action_dim(),
            hidden: self.config.hidden,
            layers: self.config.layers,
            init_std: self.config.init_std,
            normalize_observations: self.config.normalize_observations,
            seed: self.seed,
            workers: self.workers,
            actor_adam_step: self.actor_opt.step,
            critic_adam_step: self.critic_opt.step,
        }
    }

    /// Networks, normalizer and optimizer state.
    pub fn checkpoint(&self) -> Checkpoint {
        let header = serde_json::to_value(self.header()).expect("header serializes");
        let mut ck = Checkpoint::new(header, self.config_hash.clone());
        self.ac.write_into(&mut ck);
        for (name, opt) in [("adam_actor", &self.actor_opt), ("adam_critic", &self.critic_opt)] {
            for (i, (m, v)) in opt.first_moment.iter().zip(&opt.second_moment).enumerate() {
                ck.push(format!("{name}_m/{i}"), m.clone());
                ck.push(format!("{name}_v/{i}"), v.clone());
            }
        }
        ck
    }

    /// Restores a checkpoint written by [`Trainer::checkpoint`]. The network
    /// layout and sampling topology must match this trainer's.
    pub fn restore(&mut self, ck: &Checkpoint) -> Result<()> {
        let h = PolicyHeader::from_checkpoint(ck)?;
        let mine = self.header();
        if (h.obs_dim, h.action_dim, h.hidden, h.layers) != (mine.obs_dim, mine.action_dim, mine.hidden, mine.layers) {
            return Err(Error::config("checkpoint network layout does not match the config"));
        }
        if h.seed != self.seed || h.workers != self.workers {
            return Err(Error::config(format!(
                "resume topology mismatch: checkpoint has seed {} / {} workers, run has {} / {}",
                h.seed, h.workers, self.seed, self.workers
            )));
        }
        self.ac.read_from(ck)?;
        for (name, opt, step) in [
            ("adam_actor", &mut self.actor_opt, h.actor_adam_step),
            ("adam_critic", &mut self.critic_opt, h.critic_adam_step),
        ] {
            let m = ck.with_prefix(&format!("{name}_m"));
            let v = ck.with_prefix(&format!("{name}_v"));
            if m.len() != opt.first_moment.len() || v.len() != opt.second_moment.len() {
                return Err(Error::format(format!("{name} moments missing or mismatched")));
            }
            for (dst, src) in opt.first_moment.iter_mut().zip(m).chain(opt.second_moment.iter_mut().zip(v)) {
                if dst.shape() != src.shape() {
                    return Err(Error::shape(format!("{name} moment shape mismatch")));
                }
                *dst = src;
            }
            opt.step = step;
        }
        self.iteration = h.iteration;
        self.total_samples = h.total_samples;
        Ok(())
    }

    /// Runs until `config.iterations` are complete, writing into `out_dir`:
    /// `metrics.jsonl`, `reward_breakdown.csv`, and checkpoints every
    /// `checkpoint_every` iterations plus `latest.ckpt`. If `latest.ckpt`
    /// exists the run resumes from it and log lines past its iteration are
    /// dropped.
    pub fn run(&mut self, out_dir: &Path, mut on_iteration: impl FnMut(&IterationMetrics)) -> Result<()> {
        fs::create_dir_all(out_dir.join(CHECKPOINT_DIR))?;
        let latest = out_dir.join(LATEST_CHECKPOINT);
        if latest.exists() {
            self.restore(&Checkpoint::load(&latest)?)?;
        }
        truncate_logs(out_dir, self.iteration)?;
        if self.iteration == 0 {
            self.save(out_dir)?;
        }
        let mut metrics = OpenOptions::new().create(true).append(true).open(out_dir.join(METRICS_FILE))?;
        let csv_path = out_dir.join(BREAKDOWN_FILE);
        let fresh_csv = !csv_path.exists() || fs::metadata(&csv_path)?.len() == 0;
        let mut csv = csv::Writer::from_writer(OpenOptions::new().create(true).append(true).open(&csv_path)?);
        if fresh_csv {
            let mut head = vec!["iteration".to_string()];
            head.extend(BREAKDOWN_COLUMNS.iter().map(|s| s.to_string()));
            csv.write_record(&head).map_err(csv_err)?;
        }
        while self.iteration < self.config.iterations {
            let m = self.iterate(None)?;
            writeln!(metrics, "{}", serde_json::to_string(&m).expect("metrics serialize"))?;
            metrics.flush()?;
            let mut row = vec![m.iteration.to_string()];
            row.extend(m.reward_terms.iter().map(|v| format!("{v:.17e}")));
            csv.write_record(&row).map_err(csv_err)?;
            csv.flush()?;
            on_iteration(&m);
            if self.iteration % self.config.checkpoint_every.max(1) == 0 || self.iteration == self.config.iterations {
                self.save(out_dir)?;
            }
        }
        Ok(())
    }

    /// Writes the numbered checkpoint and `latest.ckpt`.
    pub fn save(&self, out_dir: &Path) -> Result<PathBuf> {
        let ck = self.checkpoint();
        let path = out_dir.join(CHECKPOINT_DIR).join(format!("iter_{:06}.ckpt", self.iteration));
        fs::create_dir_all(out_dir.join(CHECKPOINT_DIR))?;
        ck.save(&path)?;
        ck.save(&out_dir.join(LATEST_CHECKPOINT))?;
        Ok(path)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::format(format!("csv: {e}"))
}

/// Drops metrics and breakdown rows for iterations at or past `keep_below`.
fn truncate_logs(out_dir: &Path, keep_below: usize) -> Result<()> {
    let path = out_dir.join(METRICS_FILE);
    if path.exists() {
        let mut kept = String::new();
        for line in BufReader::new(File::open(&path)?).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let m: IterationMetrics =
                serde_json::from_str(&line).map_err(|e| Error::format(format!("metrics line: {e}")))?;
            if m.iteration < keep_below {
                kept.push_str(&line);
                kept.push('\n');
            }
        }
        fs::write(&path, kept)?;
    }
    let path = out_dir.join(BREAKDOWN_FILE);
    if path.exists() {
        let text = fs::read_to_string(&path)?;
        let mut kept = String::new();
        for (i, line) in text.lines().enumerate() {
            let keep = i == 0
                || line
                    .split(',')
                    .next()
                    .and_then(|s| s.parse::<usize>().ok())
                    .is_some_and(|it| it < keep_below);
            if keep {
                kept.push_str(line);
                kept.push('\n');
            }
        }
        fs::write(&path, kept)?;
    }
    Ok(())
}

