//! On-policy training: rollouts, advantage estimation, the clipped PPO
//! update, and the evaluation protocols.

mod actor_critic;
pub mod eval;
mod rollout;
mod trainer;
mod update;

pub use actor_critic::{ActorCritic, DeterministicActor, ObsNormalizer, Policy, StochasticActor, ZeroPolicy};
pub use rollout::{collect_rollouts, rollout_checksum, run_episode, EpisodeSummary, Rollout};
pub use trainer::{
    load_policy, IterationMetrics, PolicyHeader, Trainer, BREAKDOWN_FILE, CHECKPOINT_DIR, LATEST_CHECKPOINT, METRICS_FILE,
};
pub use update::{clipped_surrogate, mean_kl, ppo_update, prepare_advantages, surrogate_objective, KlProbe, UpdateStats};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::AdamConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Minimum fresh samples per iteration.
    pub samples_per_iteration: usize,
    /// Rollouts per minibatch.
    pub batch_rollouts: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Stop the epoch loop once mean KL(old ‖ new) exceeds this.
    pub kl_stop: f64,
    pub clip: f64,
    pub discount: f64,
    pub gae_lambda: f64,
    pub hidden: usize,
    pub layers: usize,
    pub init_std: f64,
    /// Iterations to run; 0 writes the initial checkpoint only.
    pub iterations: usize,
    pub checkpoint_every: usize,
    pub normalize_advantages: bool,
    pub entropy_coef: f64,
    pub max_grad_norm: Option<f64>,
    pub normalize_observations: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl TrainConfig {
    /// Full-size settings.
    pub fn full() -> Self {
        TrainConfig {
            samples_per_iteration: 50_000,
            batch_rollouts: 64,
            epochs: 5,
            learning_rate: 5e-4,
            kl_stop: 0.02,
            clip: 0.2,
            discount: 0.99,
            gae_lambda: 0.95,
            hidden: 128,
            layers: 2,
            init_std: 0.2,
            iterations: 8000,
            checkpoint_every: 10,
            normalize_advantages: true,
            entropy_coef: 0.0,
            max_grad_norm: None,
            normalize_observations: false,
        }
    }

    /// Settings that finish on a workstation.
    pub fn desk() -> Self {
        TrainConfig {
            samples_per_iteration: 4_000,
            hidden: 64,
            iterations: 30,
            checkpoint_every: 5,
            ..Self::full()
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_rollouts == 0 || self.epochs == 0 || self.hidden == 0 || self.layers == 0 {
            return Err(Error::config("batch, epochs, hidden and layers must be positive"));
        }
        if !(self.learning_rate > 0.0) || !(self.clip > 0.0) || !(self.init_std > 0.0) {
            return Err(Error::config("learning rate, clip and init_std must be positive"));
        }
        if !(0.0..=1.0).contains(&self.discount) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(Error::config("discount and gae_lambda must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Generalized advantage estimates over one trajectory. `bootstrap` is the
/// value of the state after the last step (0 for a terminal state).
pub fn compute_gae(rewards: &[f64], values: &[f64], bootstrap: f64, discount: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if rewards.len() != values.len() {
        return Err(Error::shape(format!(
            "{} rewards vs {} values",
            rewards.len(),
            values.len()
        )));
    }
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let next = if t + 1 < n { values[t + 1] } else { bootstrap };
        let delta = rewards[t] + discount * next - values[t];
        running = delta + discount * lambda * running;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

#[cfg(test)]
mod tests;
