//! Online PPO against the true dynamics, used only to produce the
//! collecting policies behind the dataset regimes.

use super::buffer::{RolloutBuffer, StepRecord};
use super::policy::PolicyNet;
use super::ppo::{ppo_update, ActorCritic, PpoConfig};
use super::train::init_actor_critic;
use crate::envs::{Env, EnvConfig};
use crate::error::Result;
use crate::nn::Tensor;
use crate::rng::{self, child, child_idx};

#[derive(Debug, Clone)]
pub struct OnlineTraining {
    pub actor_critic: ActorCritic,
    /// `(iteration, policy)` snapshots taken after the listed iterations;
    /// iteration 0 is the untrained initialization.
    pub snapshots: Vec<(usize, PolicyNet)>,
    /// Mean per-step reward of each iteration's rollouts.
    pub step_reward: Vec<f64>,
}

/// Trains for `cfg.iterations` with `cfg.agents` parallel environments
/// that reset automatically. Time-limit ends are treated as terminal.
pub fn train_online(env: &EnvConfig, cfg: &PpoConfig, snapshot_at: &[usize]) -> Result<OnlineTraining> {
    cfg.validate()?;
    env.validate()?;
    let mut ac = init_actor_critic(env, cfg);
    let (od, ad) = (env.obs_dim(), env.act_dim());
    let n = cfg.agents;
    let scale = cfg.reward_scale(env);
    let mut episode = 0u64;
    let mut envs = Vec::with_capacity(n);
    let mut obs = Vec::with_capacity(n * od);
    for _ in 0..n {
        let (e, o) = Env::new(env.clone(), child_idx(cfg.seed, "online-episode", episode))?;
        episode += 1;
        envs.push(e);
        obs.extend(o);
    }
    let mut rng = rng::rng(child(cfg.seed, "online-actions"));
    let mut ppo_rng = rng::rng(child(cfg.seed, "ppo"));
    let mut snapshots = Vec::new();
    if snapshot_at.contains(&0) {
        snapshots.push((0, ac.policy.clone()));
    }
    let mut step_reward = Vec::with_capacity(cfg.iterations);
    for it in 1..=cfg.iterations {
        let mut buf = RolloutBuffer::new(n, cfg.steps, od, ad, 0.0, ac.policy.log_std.data().to_vec());
        let std = ac.policy.std();
        let mut reward_sum = 0.0;
        for t in 0..cfg.steps {
            let o = Tensor::from_raw(vec![n, od], obs.clone());
            let mean = ac.policy.mean(&o)?;
            let mut act = mean.clone();
            for (k, a) in act.data_mut().iter_mut().enumerate() {
                *a += std[k % ad] * rng::normal(&mut rng);
            }
            let logp = ac.policy.log_prob(&mean, &act);
            let values = ac.value.values(&o)?;
            for i in 0..n {
                let out = envs[i].step(act.row_slice(i))?;
                reward_sum += out.reward.total;
                buf.record(
                    t,
                    i,
                    StepRecord {
                        obs: o.row_slice(i),
                        action: act.row_slice(i),
                        action_mean: mean.row_slice(i),
                        log_prob: logp[i],
                        reward: scale * out.reward.total,
                        uncertainty: 0.0,
                        value: values[i],
                        done: out.done,
                    },
                )?;
                let next = if out.done {
                    let (e, first) = Env::new(env.clone(), child_idx(cfg.seed, "online-episode", episode))?;
                    episode += 1;
                    envs[i] = e;
                    first
                } else {
                    out.obs
                };
                obs[i * od..(i + 1) * od].copy_from_slice(&next);
            }
        }
        let last = ac.value.values(&Tensor::from_raw(vec![n, od], obs.clone()))?;
        buf.bootstrap.copy_from_slice(&last);
        buf.finalize(cfg.gamma, cfg.gae_lambda);
        ppo_update(&mut ac, &buf, cfg, &mut ppo_rng)?;
        step_reward.push(reward_sum / (n * cfg.steps) as f64);
        if snapshot_at.contains(&it) {
            snapshots.push((it, ac.policy.clone()));
        }
    }
    Ok(OnlineTraining { actor_critic: ac, snapshots, step_reward })
}
