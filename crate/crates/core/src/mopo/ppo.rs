//! Clipped-surrogate PPO with a KL-adaptive learning rate.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::buffer::{normalize_advantages, RolloutBuffer};
use super::policy::{NetConfig, PolicyNet, ValueNet};
use crate::error::{Error, Result};
use crate::envs::EnvConfig;
use crate::nn::{clip_global_norm, collect_grads, AdamConfig, AdamState, Backend, Module, Tape, Tensor};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    /// Uncertainty penalty weight.
    pub lambda: f64,
    pub agents: usize,
    /// Imagined steps per agent per iteration.
    pub steps: usize,
    pub iterations: usize,
    pub lr: f64,
    pub lr_min: f64,
    pub lr_max: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub kl_target: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    pub net: NetConfig,
    /// Multiply per-step rewards by the control step before learning, the
    /// simulator convention the reward weights are stated in. This
    /// fixes the size of a reward relative to the penalty `λu`.
    pub dt_reward_scale: bool,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            agents: 256,
            steps: 100,
            iterations: 300,
            lr: 1e-3,
            lr_min: 1e-5,
            lr_max: 1e-2,
            weight_decay: 0.0,
            epochs: 5,
            minibatches: 4,
            kl_target: 0.01,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip: 0.2,
            entropy_coef: 0.005,
            value_coef: 1.0,
            max_grad_norm: 1.0,
            net: NetConfig::default(),
            dt_reward_scale: true,
            seed: 0,
        }
    }
}

impl PpoConfig {
    /// Factor applied to environment rewards before they enter the buffer.
    pub fn reward_scale(&self, env: &EnvConfig) -> f64 {
        if self.dt_reward_scale {
            env.dt
        } else {
            1.0
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad("lambda must be a finite non-negative number");
        }
        if self.agents == 0 || self.steps == 0 || self.epochs == 0 || self.minibatches == 0 {
            return bad("agents, steps, epochs and minibatches must be positive");
        }
        if !(self.lr_min > 0.0 && self.lr_min <= self.lr && self.lr <= self.lr_max) {
            return bad("learning rate must lie within [lr_min, lr_max]");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gamma and gae_lambda must lie in [0, 1]");
        }
        if !(self.clip > 0.0) || !(self.kl_target > 0.0) || !(self.max_grad_norm > 0.0) {
            return bad("clip, kl_target and max_grad_norm must be positive");
        }
        if self.net.hidden.is_empty() || self.net.hidden.contains(&0) || !(self.net.init_std > 0.0) {
            return bad("policy network needs non-empty hidden sizes and a positive initial std");
        }
        Ok(())
    }
}

/// Policy, value function and their shared optimizer state.
#[derive(Debug, Clone)]
pub struct ActorCritic {
    pub policy: PolicyNet,
    pub value: ValueNet,
    pub adam: AdamState,
}

impl ActorCritic {
    pub fn new(policy: PolicyNet, value: ValueNet, cfg: &PpoConfig) -> Self {
        let params: Vec<&Tensor> = policy.params().into_iter().chain(value.params()).collect();
        let adam = AdamState::new(AdamConfig { lr: cfg.lr, weight_decay: cfg.weight_decay, ..AdamConfig::default() }, &params);
        Self { policy, value, adam }
    }

    pub fn lr(&self) -> f64 {
        self.adam.config.lr
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PpoStats {
    pub kl: f64,
    pub clip_fraction: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub lr: f64,
}

/// Mean KL(old ‖ new) between diagonal Gaussians, one row per sample.
pub fn gaussian_kl(mean_old: &[f64], log_std_old: &[f64], mean_new: &[f64], log_std_new: &[f64]) -> f64 {
    let d = log_std_old.len();
    let rows = mean_old.len() / d;
    let mut total = 0.0;
    for r in 0..rows {
        for j in 0..d {
            let (so, sn) = (log_std_old[j].exp(), log_std_new[j].exp());
            let dm = mean_old[r * d + j] - mean_new[r * d + j];
            total += log_std_new[j] - log_std_old[j] + (so * so + dm * dm) / (2.0 * sn * sn) - 0.5;
        }
    }
    total / rows.max(1) as f64
}

/// Learning rate after one KL observation: divided by 1.5 above twice the
/// target, multiplied by 1.5 below half of it, then clamped.
pub fn adapt_lr(lr: f64, kl: f64, cfg: &PpoConfig) -> f64 {
    let lr = if kl > 2.0 * cfg.kl_target {
        lr / 1.5
    } else if kl < 0.5 * cfg.kl_target {
        lr * 1.5
    } else {
        lr
    };
    lr.clamp(cfg.lr_min, cfg.lr_max)
}

/// Runs `epochs × minibatches` updates on a finalized buffer.
pub fn ppo_update(ac: &mut ActorCritic, buf: &RolloutBuffer, cfg: &PpoConfig, rng: &mut Rng) -> Result<PpoStats> {
    let (Some(adv_all), Some(ret_all)) = (&buf.advantages, &buf.returns) else {
        return Err(Error::Contract("buffer must be finalized before the update".into()));
    };
    let idx: Vec<usize> = (0..buf.active.len()).filter(|&i| buf.active[i]).collect();
    if idx.is_empty() {
        return Err(Error::Size("no active steps in the rollout buffer".into()));
    }
    let adv = normalize_advantages(&idx.iter().map(|&i| adv_all[i]).collect::<Vec<_>>());
    let (od, ad) = (buf.obs_dim, buf.act_dim);
    let mb_count = cfg.minibatches.min(idx.len());
    let mut order: Vec<usize> = (0..idx.len()).collect();
    let mut stats = PpoStats::default();
    let mut updates = 0.0;
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(idx.len().div_ceil(mb_count)) {
            let n = chunk.len();
            let gather = |src: &[f64], w: usize| -> Tensor {
                let mut out = Vec::with_capacity(n * w);
                for &k in chunk {
                    let i = idx[k];
                    out.extend_from_slice(&src[i * w..(i + 1) * w]);
                }
                Tensor::from_raw(vec![n, w], out)
            };
            let obs = gather(&buf.obs, od);
            let act = gather(&buf.actions, ad);
            let old_mean = gather(&buf.action_means, ad);
            let old_logp = Tensor::from_raw(vec![n, 1], chunk.iter().map(|&k| buf.log_probs[idx[k]]).collect());
            let a = Tensor::from_raw(vec![n, 1], chunk.iter().map(|&k| adv[k]).collect());
            let ret = Tensor::from_raw(vec![n, 1], chunk.iter().map(|&k| ret_all[idx[k]]).collect());

            let mut t = Tape::new();
            let pmlp = ac.policy.mlp.bind(&mut t);
            let ls = t.param(&ac.policy.log_std);
            let vmlp = ac.value.mlp.bind(&mut t);
            let x = t.constant(ac.policy.scale.apply(&obs));
            let xv = t.constant(ac.value.scale.apply(&obs));
            let act_v = t.constant(act);
            let (logp, ent, mean) = PolicyNet::log_prob_on(&mut t, &pmlp, &ls, &x, &act_v);
            let old = t.constant(old_logp);
            let diff = t.sub(&logp, &old);
            let ratio = t.exp(&diff);
            let adv_v = t.constant(a);
            let s1 = t.mul(&ratio, &adv_v);
            let clipped = t.clamp(&ratio, 1.0 - cfg.clip, 1.0 + cfg.clip);
            let s2 = t.mul(&clipped, &adv_v);
            let surr = t.min(&s1, &s2);
            let surr_mean = t.mean(&surr);
            let pol_loss = t.scale(&surr_mean, -1.0);
            let v = vmlp.forward(&mut t, &xv);
            let ret_v = t.constant(ret);
            let verr = t.sub(&v, &ret_v);
            let verr2 = t.square(&verr);
            let vloss = t.mean(&verr2);
            let vterm = t.scale(&vloss, cfg.value_coef);
            let eterm = t.scale(&ent, -cfg.entropy_coef);
            let l1 = t.add(&pol_loss, &vterm);
            let loss = t.add(&l1, &eterm);

            let loss_value = t.value(&loss).item();
            if !loss_value.is_finite() {
                return Err(Error::NonFinite(format!("ppo loss is {loss_value}")));
            }
            let kl = gaussian_kl(old_mean.data(), &buf.log_std, t.value(&mean).data(), ac.policy.log_std.data());
            let r = t.value(&ratio).data();
            let clip_frac = r.iter().filter(|q| (*q - 1.0).abs() > cfg.clip).count() as f64 / n as f64;
            stats.kl += kl;
            stats.clip_fraction += clip_frac;
            stats.policy_loss += t.value(&pol_loss).item();
            stats.value_loss += t.value(&vloss).item();
            stats.entropy += t.value(&ent).item();
            updates += 1.0;

            let lr = adapt_lr(ac.adam.config.lr, kl, cfg);
            ac.adam.set_lr(lr);

            let grads = t.backward(loss)?;
            let mut vars = pmlp.vars();
            vars.push(ls);
            vars.extend(vmlp.vars());
            let mut g = collect_grads(&vars, &grads);
            clip_global_norm(&mut g, cfg.max_grad_norm);
            let params: Vec<&mut Tensor> = ac.policy.params_mut().into_iter().chain(ac.value.params_mut()).collect();
            ac.adam.step(params, &g)?;
            ac.policy.clamp_log_std();
        }
    }
    stats.kl /= updates;
    stats.clip_fraction /= updates;
    stats.policy_loss /= updates;
    stats.value_loss /= updates;
    stats.entropy /= updates;
    stats.lr = ac.adam.config.lr;
    Ok(stats)
}
