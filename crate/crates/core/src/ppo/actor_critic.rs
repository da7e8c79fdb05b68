use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::nn::{standard_normal, Checkpoint, NetRole, RecurrentNet, RecurrentSpec, RecurrentState, Tensor};
use crate::rng::Rng;

/// Running mean/variance of observations. Frozen while an iteration
/// collects and trains; refreshed from the new samples afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsNormalizer {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: f64,
}

impl ObsNormalizer {
    pub fn new(dim: usize) -> Self {
        ObsNormalizer {
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
            count: 0.0,
        }
    }

    pub fn apply(&self, obs: &[f64]) -> Vec<f64> {
        obs.iter()
            .zip(&self.mean)
            .zip(&self.var)
            .map(|((o, m), v)| ((o - m) / (v.sqrt() + 1e-8)).clamp(-10.0, 10.0))
            .collect()
    }

    /// Parallel-variance merge of a batch of rows.
    pub fn update<'a>(&mut self, rows: impl IntoIterator<Item = &'a [f64]>) {
        let dim = self.mean.len();
        let mut n = 0.0;
        let mut mean = vec![0.0; dim];
        let mut m2 = vec![0.0; dim];
        for row in rows {
            n += 1.0;
            for i in 0..dim {
                let d = row[i] - mean[i];
                mean[i] += d / n;
                m2[i] += d * (row[i] - mean[i]);
            }
        }
        if n == 0.0 {
            return;
        }
        let total = self.count + n;
        for i in 0..dim {
            let delta = mean[i] - self.mean[i];
            let batch_var = m2[i] / n;
            let combined = self.var[i] * self.count + batch_var * n + delta * delta * self.count * n / total;
            self.mean[i] += delta * n / total;
            self.var[i] = (combined / total).max(1e-8);
        }
        self.count = total;
    }
}

/// Independent actor and critic networks plus the optional observation
/// normalizer they share.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorCritic {
    pub actor: RecurrentNet,
    pub critic: RecurrentNet,
    pub normalizer: Option<ObsNormalizer>,
}

impl ActorCritic {
    pub fn new(obs_dim: usize, action_dim: usize, cfg: &TrainConfig, seed: u64) -> Result<Self> {
        let spec = |role, output_dim| RecurrentSpec {
            role,
            input_dim: obs_dim,
            output_dim,
            hidden: cfg.hidden,
            layers: cfg.layers,
            init_std: cfg.init_std,
        };
        Ok(ActorCritic {
            actor: RecurrentNet::new(spec(NetRole::Actor, action_dim), seed)?,
            critic: RecurrentNet::new(spec(NetRole::Critic, 1), seed)?,
            normalizer: cfg.normalize_observations.then(|| ObsNormalizer::new(obs_dim)),
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.actor.spec().input_dim
    }

    pub fn action_dim(&self) -> usize {
        self.actor.spec().output_dim
    }

    pub fn log_std(&self) -> Vec<f64> {
        let id = self.actor.log_std_param().expect("actor owns a log-std");
        self.actor.params().get(id).data().to_vec()
    }

    pub fn normalize(&self, obs: &[f64]) -> Vec<f64> {
        match &self.normalizer {
            Some(n) => n.apply(obs),
            None => obs.to_vec(),
        }
    }

    /// Writes both networks and the normalizer.
    pub fn write_into(&self, ck: &mut Checkpoint) {
        ck.extend_prefixed("actor", self.actor.params().names().iter().zip(self.actor.params().tensors()));
        ck.extend_prefixed("critic", self.critic.params().names().iter().zip(self.critic.params().tensors()));
        if let Some(n) = &self.normalizer {
            ck.push("obs_norm/mean", Tensor::row(&n.mean));
            ck.push("obs_norm/var", Tensor::row(&n.var));
            ck.push("obs_norm/count", Tensor::scalar(n.count));
        }
    }

    pub fn read_from(&mut self, ck: &Checkpoint) -> Result<()> {
        self.actor.params_mut().load(ck.with_prefix("actor"))?;
        self.critic.params_mut().load(ck.with_prefix("critic"))?;
        match (&mut self.normalizer, ck.get("obs_norm/mean")) {
            (Some(n), Some(mean)) => {
                let var = ck.get("obs_norm/var").ok_or_else(|| Error::format("missing obs_norm/var"))?;
                let count = ck.get("obs_norm/count").ok_or_else(|| Error::format("missing obs_norm/count"))?;
                if mean.len() != n.mean.len() || var.len() != n.var.len() {
                    return Err(Error::shape("normalizer dimension mismatch"));
                }
                n.mean = mean.data().to_vec();
                n.var = var.data().to_vec();
                n.count = count.data()[0];
            }
            (None, None) => {}
            _ => return Err(Error::format("checkpoint and config disagree on observation normalization")),
        }
        Ok(())
    }
}

/// Something that maps observations to actions, with per-episode memory.
pub trait Policy: Send {
    fn reset(&mut self);
    fn act(&mut self, obs: &[f64]) -> Result<Vec<f64>>;
}

/// Always outputs zeros (nominal setpoints).
#[derive(Debug, Clone)]
pub struct ZeroPolicy(pub usize);

impl Policy for ZeroPolicy {
    fn reset(&mut self) {}

    fn act(&mut self, _obs: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![0.0; self.0])
    }
}

/// The actor's mean action.
#[derive(Debug, Clone)]
pub struct DeterministicActor {
    ac: ActorCritic,
    state: RecurrentState,
}

impl DeterministicActor {
    pub fn new(ac: ActorCritic) -> Self {
        let state = ac.actor.zero_state(1);
        DeterministicActor { ac, state }
    }

    pub fn inner(&self) -> &ActorCritic {
        &self.ac
    }
}

impl Policy for DeterministicActor {
    fn reset(&mut self) {
        self.state = self.ac.actor.zero_state(1);
    }

    fn act(&mut self, obs: &[f64]) -> Result<Vec<f64>> {
        let x = Tensor::row(&self.ac.normalize(obs));
        let mean = self.ac.actor.forward(&x, &mut self.state)?;
        if !mean.is_finite() {
            return Err(Error::NonFinite("policy output".into()));
        }
        Ok(mean.into_data())
    }
}

/// One step of the stochastic policy with its value estimate.
pub struct ActorStep {
    pub action: Vec<f64>,
    pub mean: Vec<f64>,
    pub log_prob: f64,
    pub value: f64,
}

/// Samples from the Gaussian policy and tracks actor and critic memory.
pub struct StochasticActor<'a> {
    ac: &'a ActorCritic,
    log_std: Vec<f64>,
    actor_state: RecurrentState,
    critic_state: RecurrentState,
}

impl<'a> StochasticActor<'a> {
    pub fn new(ac: &'a ActorCritic) -> Self {
        StochasticActor {
            ac,
            log_std: ac.log_std(),
            actor_state: ac.actor.zero_state(1),
            critic_state: ac.critic.zero_state(1),
        }
    }

    pub fn step(&mut self, obs: &[f64], rng: &mut Rng) -> Result<ActorStep> {
        let x = Tensor::row(&self.ac.normalize(obs));
        let mean = self.ac.actor.forward(&x, &mut self.actor_state)?.into_data();
        let value = self.ac.critic.forward(&x, &mut self.critic_state)?.data()[0];
        if mean.iter().any(|v| !v.is_finite()) || !value.is_finite() {
            return Err(Error::NonFinite("actor-critic output".into()));
        }
        let action: Vec<f64> = mean
            .iter()
            .zip(&self.log_std)
            .map(|(m, ls)| m + ls.exp() * standard_normal(rng))
            .collect();
        let log_prob = crate::nn::dist::log_prob(&mean, &self.log_std, &action);
        Ok(ActorStep {
            action,
            mean,
            log_prob,
            value,
        })
    }

    /// Critic estimate for `obs` without advancing its memory.
    pub fn peek_value(&self, obs: &[f64]) -> Result<f64> {
        let x = Tensor::row(&self.ac.normalize(obs));
        let mut s = self.critic_state.clone();
        Ok(self.ac.critic.forward(&x, &mut s)?.data()[0])
    }
}
