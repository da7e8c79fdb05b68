use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::actor_critic::{ActorCritic, Policy, StochasticActor};
use crate::env::SteppingEnv;
use crate::error::{Error, Result};
use crate::reward::RewardBreakdown;
use crate::rng::{derive_seed, rng_from};

/// One on-policy episode. All per-step arrays have the same length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    /// Seed the episode (environment reset and action noise) was drawn from.
    /// Recurrent state always starts at zero.
    pub seed: u64,
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub means: Vec<Vec<f64>>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub breakdowns: Vec<RewardBreakdown>,
    /// Set on the last step only.
    pub dones: Vec<bool>,
    pub step_errors: Vec<f64>,
    pub randomizations: usize,
    /// The robot fell.
    pub terminal: bool,
    pub diverged: bool,
    /// Value of the state after the last step; 0 when terminal.
    pub bootstrap: f64,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }

    /// Checks that every per-step array has the same length.
    pub fn check_consistent(&self) -> Result<()> {
        let n = self.len();
        let lens = [
            self.observations.len(),
            self.actions.len(),
            self.means.len(),
            self.log_probs.len(),
            self.values.len(),
            self.breakdowns.len(),
            self.dones.len(),
        ];
        if lens.iter().any(|&l| l != n) {
            return Err(Error::shape(format!("rollout arrays disagree: {n} rewards vs {lens:?}")));
        }
        if n > 0 && (!self.dones[n - 1] || self.dones[..n - 1].iter().any(|&d| d)) {
            return Err(Error::input("done flag must be set on the last step only"));
        }
        Ok(())
    }

    /// Runs one episode with the stochastic policy.
    pub fn sample<E: SteppingEnv + ?Sized>(env: &mut E, ac: &ActorCritic, seed: u64, max_steps: usize) -> Result<Rollout> {
        let mut rng = rng_from(seed, &[0xAC7]);
        let mut actor = StochasticActor::new(ac);
        let mut obs = env.reset(seed)?;
        let mut r = Rollout {
            seed,
            observations: Vec::new(),
            actions: Vec::new(),
            means: Vec::new(),
            log_probs: Vec::new(),
            rewards: Vec::new(),
            values: Vec::new(),
            breakdowns: Vec::new(),
            dones: Vec::new(),
            step_errors: Vec::new(),
            randomizations: 0,
            terminal: false,
            diverged: false,
            bootstrap: 0.0,
            advantages: Vec::new(),
            returns: Vec::new(),
        };
        for t in 0..max_steps {
            let step = actor.step(&obs, &mut rng)?;
            let out = env.step(&step.action)?;
            let finished = out.done();
            r.observations.push(std::mem::replace(&mut obs, out.observation));
            r.actions.push(step.action);
            r.means.push(step.mean);
            r.log_probs.push(step.log_prob);
            r.values.push(step.value);
            r.rewards.push(out.reward);
            r.breakdowns.push(out.breakdown);
            if let Some(td) = out.touchdown {
                r.step_errors.push(td.error);
            }
            r.randomizations += out.randomized as usize;
            let done = finished || t + 1 == max_steps;
            r.dones.push(done);
            if done {
                r.terminal = out.terminal;
                r.diverged = out.diverged;
                break;
            }
        }
        if !r.terminal {
            r.bootstrap = actor.peek_value(&obs)?;
        }
        Ok(r)
    }
}

/// Collects at least `samples` fresh steps with the current snapshot.
///
/// Worker `w` of `workers` runs episodes `w, w + workers, …` until it has
/// its share of the samples; episode `k` is seeded from `(seed, k)` and the
/// results are merged in episode order, so the output depends only on
/// `(seed, workers)`.
pub fn collect_rollouts<E>(
    env: &E,
    ac: &ActorCritic,
    seed: u64,
    samples: usize,
    max_steps: usize,
    workers: usize,
) -> Result<Vec<Rollout>>
where
    E: SteppingEnv + Clone + Sync,
{
    if workers == 0 || max_steps == 0 {
        return Err(Error::config("workers and rollout length must be positive"));
    }
    let quota = samples.div_ceil(workers).max(1);
    let run_worker = |w: usize| -> Result<Vec<(usize, Rollout)>> {
        let mut env = env.clone();
        let mut out = Vec::new();
        let mut count = 0;
        let mut k = w;
        while count < quota {
            let r = Rollout::sample(&mut env, ac, derive_seed(seed, &[k as u64]), max_steps)?;
            count += r.len();
            out.push((k, r));
            k += workers;
        }
        Ok(out)
    };
    let per_worker: Vec<Result<Vec<(usize, Rollout)>>> = if workers == 1 {
        vec![run_worker(0)]
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..workers).map(|w| s.spawn(move || run_worker(w))).collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(Error::input("sampling worker panicked"))))
                .collect()
        })
    };
    let mut all = Vec::new();
    for r in per_worker {
        all.extend(r?);
    }
    all.sort_by_key(|(k, _)| *k);
    Ok(all.into_iter().map(|(_, r)| r).collect())
}

/// SHA-256 over observations, actions and rewards of a set of rollouts.
pub fn rollout_checksum(rollouts: &[Rollout]) -> String {
    let mut h = Sha256::new();
    for r in rollouts {
        h.update(r.seed.to_le_bytes());
        for (o, a) in r.observations.iter().zip(&r.actions) {
            for v in o.iter().chain(a) {
                h.update(v.to_le_bytes());
            }
        }
        for v in &r.rewards {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Result of running a policy for one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub steps: usize,
    pub total_reward: f64,
    pub step_errors: Vec<f64>,
    pub fell: bool,
}

pub fn run_episode<E, P>(env: &mut E, policy: &mut P, seed: u64, max_steps: usize) -> Result<EpisodeSummary>
where
    E: SteppingEnv + ?Sized,
    P: Policy + ?Sized,
{
    policy.reset();
    let mut obs = env.reset(seed)?;
    let mut s = EpisodeSummary {
        steps: 0,
        total_reward: 0.0,
        step_errors: Vec::new(),
        fell: false,
    };
    for _ in 0..max_steps {
        let a = policy.act(&obs)?;
        let out = env.step(&a)?;
        s.steps += 1;
        s.total_reward += out.reward;
        if let Some(td) = out.touchdown {
            s.step_errors.push(td.error);
        }
        if out.done() {
            s.fell = out.terminal || out.diverged;
            break;
        }
        obs = out.observation;
    }
    Ok(s)
}
