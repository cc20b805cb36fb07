use rand_distr::{Distribution, Normal};

use super::{DatasetMeta, Episode, OfflineDataset};
use crate::envs::{Controller, Env, EnvConfig};
use crate::error::{Error, Result};
use crate::rng;

/// Rolls `policy` (plus Gaussian action noise) through fresh episodes of
/// the true environment until at least `n_transitions` have been stored.
/// The last episode is always completed, so the count overshoots by less
/// than one episode.
pub fn collect(
    cfg: &EnvConfig,
    policy: &impl Controller,
    n_transitions: usize,
    action_noise: f64,
    seed: u64,
    policy_tag: &str,
) -> Result<OfflineDataset> {
    cfg.validate()?;
    let (od, ad) = (cfg.obs_dim(), cfg.act_dim());
    if policy.obs_dim() != od || policy.act_dim() != ad {
        return Err(Error::Contract(format!(
            "policy maps {} -> {} but {} has {od} -> {ad}",
            policy.obs_dim(),
            policy.act_dim(),
            cfg.kind.name()
        )));
    }
    if n_transitions < cfg.episode_length {
        return Err(Error::Contract(format!(
            "asked for {n_transitions} transitions, fewer than one episode ({})",
            cfg.episode_length
        )));
    }
    if !(action_noise >= 0.0 && action_noise.is_finite()) {
        return Err(Error::Config(format!("action noise {action_noise} must be a finite non-negative std")));
    }
    let noise = Normal::new(0.0, action_noise).map_err(|e| Error::Config(e.to_string()))?;
    let mut noise_rng = rng::rng(rng::child(seed, "action-noise"));
    let mut episodes = Vec::new();
    let mut total = 0;
    while total < n_transitions {
        let (mut env, obs) = Env::new(cfg.clone(), rng::child_idx(seed, "episode", episodes.len() as u64))?;
        let mut ep = Episode::new(od, ad, &obs);
        let mut obs = obs;
        loop {
            let mut action = policy.act(&obs);
            if action_noise > 0.0 {
                for a in &mut action {
                    *a += noise.sample(&mut noise_rng);
                }
            }
            let out = env.step(&action)?;
            ep.push(&out.state.prev_action, &out.obs, out.reward.total, out.done, out.failure);
            obs = out.obs;
            if out.done {
                break;
            }
        }
        total += ep.len();
        episodes.push(ep);
    }
    let meta = DatasetMeta {
        env_kind: cfg.kind,
        env_hash: cfg.hash(),
        policy_tag: policy_tag.to_string(),
        seed,
        transitions: total,
        mix_ratio: None,
        hash: String::new(),
    };
    OfflineDataset::new(meta, od, ad, episodes)
}
