use serde::{Deserialize, Serialize};

use super::imagine::imagine;
use super::policy::{ObsScale, PolicyNet, ValueNet};
use super::ppo::{ppo_update, ActorCritic, PpoConfig};
use crate::datasets::OfflineDataset;
use crate::envs::EnvConfig;
use crate::error::{Error, Result};
use crate::rng::{self, child};
use crate::world_model::WorldModel;

/// One row of the training curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub iteration: usize,
    /// Mean raw reward per agent-step slot of the imagined batch.
    pub imagination_reward: f64,
    pub mean_uncertainty: f64,
    pub kl: f64,
    pub clip_fraction: f64,
    pub lr: f64,
}

pub const CURVE_COLUMNS: [&str; 6] = ["iteration", "imagination_reward", "mean_uncertainty", "kl", "clip_fraction", "lr"];

pub fn curves_csv(rows: &[CurveRow]) -> String {
    let mut s = CURVE_COLUMNS.join(",");
    s.push('\n');
    for r in rows {
        s.push_str(&format!(
            "{},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e}\n",
            r.iteration, r.imagination_reward, r.mean_uncertainty, r.kl, r.clip_fraction, r.lr
        ));
    }
    s
}

#[derive(Debug, Clone)]
pub struct PolicyTraining {
    pub actor_critic: ActorCritic,
    pub curves: Vec<CurveRow>,
}

impl PolicyTraining {
    pub fn policy(&self) -> &PolicyNet {
        &self.actor_critic.policy
    }

    /// Mean imagination reward over the last `k` iterations.
    pub fn final_imagination_reward(&self, k: usize) -> f64 {
        let tail = &self.curves[self.curves.len().saturating_sub(k.max(1))..];
        tail.iter().map(|r| r.imagination_reward).sum::<f64>() / tail.len().max(1) as f64
    }
}

/// Fresh policy and value networks for an environment.
pub fn init_actor_critic(env: &EnvConfig, cfg: &PpoConfig) -> ActorCritic {
    let policy = PolicyNet::for_env(env, cfg.net.clone(), cfg.seed);
    let value = ValueNet::new(ObsScale::for_env(env), &cfg.net, &mut rng::rng(child(cfg.seed, "value-init")));
    ActorCritic::new(policy, value, cfg)
}

/// Offline policy optimization purely inside the world model.
pub fn train_policy(model: &WorldModel, ds: &OfflineDataset, env: &EnvConfig, cfg: &PpoConfig) -> Result<PolicyTraining> {
    cfg.validate()?;
    if ds.meta.env_kind != env.kind {
        return Err(Error::Contract(format!("dataset was collected on {:?}, policy targets {:?}", ds.meta.env_kind, env.kind)));
    }
    let mut ac = init_actor_critic(env, cfg);
    let mut imag_rng = rng::rng(child(cfg.seed, "imagine"));
    let mut ppo_rng = rng::rng(child(cfg.seed, "ppo"));
    let mut curves = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let mut buf = imagine(model, &ac, ds, env, cfg, &mut imag_rng)?;
        buf.finalize(cfg.gamma, cfg.gae_lambda);
        let stats = ppo_update(&mut ac, &buf, cfg, &mut ppo_rng)?;
        curves.push(CurveRow {
            iteration: it,
            imagination_reward: buf.mean_slot_reward(),
            mean_uncertainty: buf.mean_uncertainty(),
            kl: stats.kl,
            clip_fraction: stats.clip_fraction,
            lr: stats.lr,
        });
    }
    Ok(PolicyTraining { actor_critic: ac, curves })
}
