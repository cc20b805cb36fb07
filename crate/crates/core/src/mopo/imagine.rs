//! Batched policy rollouts inside a trained world model.
//!
//! Agents start from the last frame of history windows sampled from the
//! offline data. Commands and previous actions are known to the agent, so
//! those observation dimensions are written in rather than predicted.
//! Rewards come from the analytic reward library applied to the imagined
//! observation; no ground-truth step is ever taken.

use rand::Rng as _;

use super::buffer::{RolloutBuffer, StepRecord};
use super::ppo::{ActorCritic, PpoConfig};
use crate::datasets::{sample_windows, OfflineDataset};
use crate::envs::{is_failure, reward, EnvConfig};
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::rng::{self, Rng};
use crate::world_model::{BatchRollout, WorldModel};

/// Fills a rollout buffer with `cfg.agents × cfg.steps` imagined steps
/// penalized with `cfg.lambda`.
pub fn imagine(
    model: &WorldModel,
    ac: &ActorCritic,
    ds: &OfflineDataset,
    env: &EnvConfig,
    cfg: &PpoConfig,
    rng: &mut Rng,
) -> Result<RolloutBuffer> {
    let (od, ad) = (env.obs_dim(), env.act_dim());
    if model.obs_dim() != od || model.act_dim() != ad || ds.obs_dim() != od {
        return Err(Error::Contract("world model, dataset and environment disagree on dimensions".into()));
    }
    let layout = env.kind.layout();
    let m = model.config.history;
    let n = cfg.agents;
    let win = sample_windows(ds, m, 1, n, 1, 1.0, rng)?;
    let mut roll = BatchRollout::start(model, &win.history_obs, &win.history_act[..m - 1])?;
    let start = win.history_obs[m - 1].clone();

    let mut command: Vec<Vec<f64>> = (0..n).map(|i| start.row_slice(i)[layout.command.clone()].to_vec()).collect();
    let interval = env.command_interval;
    let mut countdown: Vec<usize> = (0..n).map(|_| rng.random_range(1..=interval)).collect();
    let mut active = vec![true; n];
    let std = ac.policy.std();
    let mut buf = RolloutBuffer::new(n, cfg.steps, od, ad, cfg.lambda, ac.policy.log_std.data().to_vec());
    let threshold = model.config.failure_threshold;
    let scale = cfg.reward_scale(env);

    for t in 0..cfg.steps {
        let obs = roll.last_obs().clone();
        let mean = ac.policy.mean(&obs)?;
        let mut act = mean.clone();
        for (k, a) in act.data_mut().iter_mut().enumerate() {
            *a += std[k % ad] * rng::normal(rng);
        }
        let logp = ac.policy.log_prob(&mean, &act);
        let applied = act.map(|a| a.clamp(-1.0, 1.0));
        let values = ac.value.values(&obs)?;
        let pred = roll.step(&applied)?;

        let mut next = pred.obs.clone().into_data();
        for i in 0..n {
            let row = &mut next[i * od..(i + 1) * od];
            if !active[i] {
                row.copy_from_slice(start.row_slice(i));
                continue;
            }
            row[layout.command.clone()].copy_from_slice(&command[i]);
            row[layout.prev_action.clone()].copy_from_slice(applied.row_slice(i));
            let diverged = pred.diverged[i] || row.iter().any(|v| !v.is_finite());
            let failure = diverged || pred.failure_prob[i] > threshold || is_failure(&row[layout.position.clone()], env);
            let prev = &obs.row_slice(i)[layout.prev_action.clone()];
            let r = scale
                * if diverged {
                    env.reward.failure
                } else {
                    reward(row, applied.row_slice(i), prev, failure, env).total
                };
            let u = if pred.epistemic_scalar[i].is_finite() { pred.epistemic_scalar[i] } else { 0.0 };
            buf.record(
                t,
                i,
                StepRecord {
                    obs: obs.row_slice(i),
                    action: act.row_slice(i),
                    action_mean: mean.row_slice(i),
                    log_prob: logp[i],
                    reward: r,
                    uncertainty: u,
                    value: values[i],
                    done: failure,
                },
            )?;
            if failure {
                active[i] = false;
                row.copy_from_slice(start.row_slice(i));
                continue;
            }
            countdown[i] -= 1;
            if countdown[i] == 0 {
                countdown[i] = interval;
                for c in command[i].iter_mut() {
                    *c = rng.random_range(-1.0..=1.0) * env.command_bound;
                }
                row[layout.command.clone()].copy_from_slice(&command[i]);
            }
        }
        roll.set_last_obs(Tensor::from_raw(vec![n, od], next))?;
    }
    let last = ac.value.values(roll.last_obs())?;
    for i in 0..n {
        buf.bootstrap[i] = if active[i] { last[i] } else { 0.0 };
    }
    Ok(buf)
}
