use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::actor_critic::ActorCritic;
use super::rollout::Rollout;
use super::{compute_gae, TrainConfig};
use crate::error::{Error, Result};
use crate::nn::dist::{entropy, kl_divergence, log_prob_graph};
use crate::nn::{Adam, Gradients, Graph, Tensor, Var};
use crate::rng::Rng;

/// Hook run after every epoch with the measured mean KL; the returned value
/// is what the stopping rule sees.
pub trait KlProbe {
    fn observe(&mut self, epoch: usize, measured: f64) -> f64;
}

impl<F: FnMut(usize, f64) -> f64> KlProbe for F {
    fn observe(&mut self, epoch: usize, measured: f64) -> f64 {
        self(epoch, measured)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub epochs_run: usize,
    /// KL seen by the stopping rule after the last executed epoch.
    pub kl_at_stop: f64,
    pub kl_per_epoch: Vec<f64>,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// A non-finite loss or gradient aborted the update and the pre-update
    /// networks were restored.
    pub restored: bool,
}

/// Per-sample clipped objective `min(ρA, clip(ρ, 1−ε, 1+ε)A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - clip, 1.0 + clip) * advantage)
}

/// Masked mean of the clipped objective on a graph. All inputs are `[N, 1]`.
pub fn surrogate_objective(
    g: &mut Graph,
    log_probs: Var,
    old_log_probs: &Tensor,
    advantages: &Tensor,
    mask: &Tensor,
    clip: f64,
) -> Result<Var> {
    let count = mask.data().iter().sum::<f64>();
    if count <= 0.0 {
        return Err(Error::input("empty minibatch"));
    }
    let old = g.input(old_log_probs.clone());
    let adv = g.input(advantages.clone());
    let m = g.input(mask.clone());
    let diff = g.sub(log_probs, old)?;
    let ratio = g.exp(diff);
    let plain = g.mul(ratio, adv)?;
    let clipped = g.clamp(ratio, 1.0 - clip, 1.0 + clip);
    let clipped = g.mul(clipped, adv)?;
    let obj = g.minimum(plain, clipped)?;
    let obj = g.mul(obj, m)?;
    let total = g.sum(obj);
    Ok(g.scale(total, 1.0 / count))
}

/// Fills `advantages` and `returns` on every rollout.
pub fn prepare_advantages(rollouts: &mut [Rollout], cfg: &TrainConfig) -> Result<()> {
    for r in rollouts.iter_mut() {
        let (adv, ret) = compute_gae(&r.rewards, &r.values, r.bootstrap, cfg.discount, cfg.gae_lambda)?;
        r.advantages = adv;
        r.returns = ret;
    }
    Ok(())
}

/// Time-major padded batch: row `t * B + b` is step `t` of rollout `b`.
struct Batch {
    steps: usize,
    inputs: Vec<Tensor>,
    actions: Tensor,
    old_log_probs: Tensor,
    advantages: Tensor,
    returns: Tensor,
    mask: Tensor,
}

fn build_batch(
    ac: &ActorCritic,
    rollouts: &[&Rollout],
    advantages: &[&[f64]],
) -> Batch {
    let b = rollouts.len();
    let steps = rollouts.iter().map(|r| r.len()).max().unwrap_or(0);
    let d = ac.obs_dim();
    let n = ac.action_dim();
    let mut inputs = Vec::with_capacity(steps);
    let rows = steps * b;
    let mut actions = vec![0.0; rows * n];
    let mut old = vec![0.0; rows];
    let mut adv = vec![0.0; rows];
    let mut ret = vec![0.0; rows];
    let mut mask = vec![0.0; rows];
    for t in 0..steps {
        let mut x = vec![0.0; b * d];
        for (i, r) in rollouts.iter().enumerate() {
            if t >= r.len() {
                continue;
            }
            x[i * d..(i + 1) * d].copy_from_slice(&ac.normalize(&r.observations[t]));
            let row = t * b + i;
            actions[row * n..(row + 1) * n].copy_from_slice(&r.actions[t]);
            old[row] = r.log_probs[t];
            adv[row] = advantages[i][t];
            ret[row] = r.returns[t];
            mask[row] = 1.0;
        }
        inputs.push(Tensor::from_parts(vec![b, d], x));
    }
    Batch {
        steps,
        inputs,
        actions: Tensor::from_parts(vec![rows, n], actions),
        old_log_probs: Tensor::from_parts(vec![rows, 1], old),
        advantages: Tensor::from_parts(vec![rows, 1], adv),
        returns: Tensor::from_parts(vec![rows, 1], ret),
        mask: Tensor::from_parts(vec![rows, 1], mask),
    }
}

fn clip_gradients(grads: &mut Gradients, max_norm: Option<f64>) {
    if let Some(m) = max_norm {
        let norm = grads.global_norm();
        if norm > m && norm > 0.0 {
            grads.scale(m / norm);
        }
    }
}

/// Actor step on one minibatch; returns the loss.
fn actor_step(ac: &mut ActorCritic, opt: &mut Adam, batch: &Batch, cfg: &TrainConfig) -> Result<f64> {
    let (loss_value, mut grads) = {
        let net = &ac.actor;
        let mut g = Graph::new(net.params());
        let xs: Vec<Var> = batch.inputs.iter().map(|x| g.input(x.clone())).collect();
        let state = net.zero_state(batch.inputs[0].dims2().0);
        let means = net.unroll(&mut g, &xs, &state)?;
        let mean = g.concat_rows(&means)?;
        let log_std = g.param(net.log_std_param().expect("actor owns a log-std"));
        let lp = log_prob_graph(&mut g, mean, log_std, &batch.actions)?;
        let obj = surrogate_objective(&mut g, lp, &batch.old_log_probs, &batch.advantages, &batch.mask, cfg.clip)?;
        let mut loss = g.scale(obj, -1.0);
        if cfg.entropy_coef != 0.0 {
            let h = crate::nn::dist::entropy_graph(&mut g, log_std);
            let h = g.scale(h, -cfg.entropy_coef);
            loss = g.add(loss, h)?;
        }
        let value = g.value(loss).data()[0];
        if !value.is_finite() {
            return Err(Error::NonFinite("policy loss".into()));
        }
        (value, g.backward(loss)?)
    };
    clip_gradients(&mut grads, cfg.max_grad_norm);
    opt.update(ac.actor.params_mut(), &grads)?;
    Ok(loss_value)
}

fn critic_step(ac: &mut ActorCritic, opt: &mut Adam, batch: &Batch, cfg: &TrainConfig) -> Result<f64> {
    let (loss_value, mut grads) = {
        let net = &ac.critic;
        let mut g = Graph::new(net.params());
        let xs: Vec<Var> = batch.inputs.iter().map(|x| g.input(x.clone())).collect();
        let state = net.zero_state(batch.inputs[0].dims2().0);
        let values = net.unroll(&mut g, &xs, &state)?;
        let v = g.concat_rows(&values)?;
        let target = g.input(batch.returns.clone());
        let m = g.input(batch.mask.clone());
        let diff = g.sub(v, target)?;
        let sq = g.square(diff);
        let sq = g.mul(sq, m)?;
        let total = g.sum(sq);
        let count = batch.mask.data().iter().sum::<f64>();
        let loss = g.scale(total, 1.0 / count);
        let value = g.value(loss).data()[0];
        if !value.is_finite() {
            return Err(Error::NonFinite("value loss".into()));
        }
        (value, g.backward(loss)?)
    };
    clip_gradients(&mut grads, cfg.max_grad_norm);
    opt.update(ac.critic.params_mut(), &grads)?;
    Ok(loss_value)
}

/// Mean `KL(old ‖ current)` over every sample, with the old distribution
/// taken from the means and log-std recorded at collection time.
pub fn mean_kl(ac: &ActorCritic, rollouts: &[Rollout], old_log_std: &[f64]) -> Result<f64> {
    let refs: Vec<&Rollout> = rollouts.iter().collect();
    if refs.iter().all(|r| r.is_empty()) {
        return Ok(0.0);
    }
    let batch = padded_inputs(ac, &refs);
    let new_log_std = ac.log_std();
    let mut state = ac.actor.zero_state(refs.len());
    let mut total = 0.0;
    let mut count = 0usize;
    for (t, x) in batch.iter().enumerate() {
        let mean = ac.actor.forward(x, &mut state)?;
        for (b, r) in refs.iter().enumerate() {
            if t < r.len() {
                total += kl_divergence(&r.means[t], old_log_std, mean.row_slice(b), &new_log_std);
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

fn padded_inputs(ac: &ActorCritic, rollouts: &[&Rollout]) -> Vec<Tensor> {
    let b = rollouts.len();
    let d = ac.obs_dim();
    let steps = rollouts.iter().map(|r| r.len()).max().unwrap_or(0);
    (0..steps)
        .map(|t| {
            let mut x = vec![0.0; b * d];
            for (i, r) in rollouts.iter().enumerate() {
                if t < r.len() {
                    x[i * d..(i + 1) * d].copy_from_slice(&ac.normalize(&r.observations[t]));
                }
            }
            Tensor::from_parts(vec![b, d], x)
        })
        .collect()
}

fn normalized_advantages(rollouts: &[Rollout], normalize: bool) -> Vec<Vec<f64>> {
    if !normalize {
        return rollouts.iter().map(|r| r.advantages.clone()).collect();
    }
    let all: Vec<f64> = rollouts.iter().flat_map(|r| r.advantages.iter().copied()).collect();
    let n = all.len().max(1) as f64;
    let mean = all.iter().sum::<f64>() / n;
    let std = (all.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
    rollouts
        .iter()
        .map(|r| r.advantages.iter().map(|a| (a - mean) / (std + 1e-8)).collect())
        .collect()
}

/// Clipped-surrogate update over whole-rollout minibatches.
///
/// Expects `advantages` and `returns` filled (see [`prepare_advantages`]).
/// Runs up to `cfg.epochs` epochs and stops after the first epoch whose
/// mean KL exceeds `cfg.kl_stop`. On a non-finite loss both networks and
/// optimizers are restored to their state on entry.
pub fn ppo_update(
    ac: &mut ActorCritic,
    actor_opt: &mut Adam,
    critic_opt: &mut Adam,
    rollouts: &[Rollout],
    cfg: &TrainConfig,
    rng: &mut Rng,
    mut probe: Option<&mut dyn KlProbe>,
) -> Result<UpdateStats> {
    if rollouts.iter().all(|r| r.is_empty()) {
        return Err(Error::input("ppo_update needs at least one non-empty rollout"));
    }
    for r in rollouts {
        if r.advantages.len() != r.len() || r.returns.len() != r.len() {
            return Err(Error::shape("advantages not prepared"));
        }
    }
    let snapshot = (ac.clone(), actor_opt.clone(), critic_opt.clone());
    let old_log_std = ac.log_std();
    let advantages = normalized_advantages(rollouts, cfg.normalize_advantages);
    let mut order: Vec<usize> = (0..rollouts.len()).filter(|&i| !rollouts[i].is_empty()).collect();
    let mut stats = UpdateStats {
        epochs_run: 0,
        kl_at_stop: 0.0,
        kl_per_epoch: Vec::new(),
        policy_loss: 0.0,
        value_loss: 0.0,
        entropy: entropy(&old_log_std),
        restored: false,
    };

    let mut run = || -> Result<()> {
        for epoch in 0..cfg.epochs {
            order.shuffle(rng);
            let (mut pl, mut vl, mut nb) = (0.0, 0.0, 0.0);
            for chunk in order.chunks(cfg.batch_rollouts) {
                let rs: Vec<&Rollout> = chunk.iter().map(|&i| &rollouts[i]).collect();
                let adv: Vec<&[f64]> = chunk.iter().map(|&i| advantages[i].as_slice()).collect();
                let batch = build_batch(ac, &rs, &adv);
                debug_assert!(batch.steps > 0);
                pl += actor_step(ac, actor_opt, &batch, cfg)?;
                vl += critic_step(ac, critic_opt, &batch, cfg)?;
                nb += 1.0;
            }
            stats.policy_loss = pl / nb;
            stats.value_loss = vl / nb;
            stats.epochs_run = epoch + 1;
            let measured = mean_kl(ac, rollouts, &old_log_std)?;
            if !measured.is_finite() {
                return Err(Error::NonFinite("kl".into()));
            }
            let kl = match probe.as_deref_mut() {
                Some(p) => p.observe(epoch + 1, measured),
                None => measured,
            };
            stats.kl_per_epoch.push(kl);
            stats.kl_at_stop = kl;
            if kl > cfg.kl_stop {
                break;
            }
        }
        Ok(())
    };
    match run() {
        Ok(()) => {
            stats.entropy = entropy(&ac.log_std());
            Ok(stats)
        }
        Err(Error::NonFinite(_)) => {
            *ac = snapshot.0;
            *actor_opt = snapshot.1;
            *critic_opt = snapshot.2;
            stats.restored = true;
            Ok(stats)
        }
        Err(e) => Err(e),
    }
}
