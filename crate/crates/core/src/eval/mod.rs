//! Policy evaluation on the true dynamics, score normalization and the
//! scripted studies (penalty sweep, dataset regimes, sim/real mixtures).

mod study;

use serde::{Deserialize, Serialize};

use crate::envs::{Controller, Env, EnvConfig};
use crate::error::{Error, Result};
use crate::rng::child_idx;

pub use study::{
    anchors, build_sources, emit_report, fit_world_model, parse_csv, policy_cell, study_lambda, study_mixture, study_regimes, variant_name, Axis,
    Provenance, StudyCell, StudyKind, StudyReport, StudySettings,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub mean_return: f64,
    /// Population std of episode returns.
    pub std_return: f64,
    pub failure_rate: f64,
    pub normalized: Option<f64>,
    pub episodes: usize,
    pub seed: u64,
    pub returns: Vec<f64>,
}

/// Rolls the controller's deterministic action out on the true dynamics
/// for `episodes` full episodes.
pub fn evaluate(policy: &dyn Controller, env: &EnvConfig, episodes: usize, seed: u64) -> Result<EvalResult> {
    if episodes == 0 {
        return Err(Error::Config("evaluation needs at least one episode".into()));
    }
    if policy.obs_dim() != env.obs_dim() || policy.act_dim() != env.act_dim() {
        return Err(Error::Contract("policy and environment disagree on dimensions".into()));
    }
    let mut returns = Vec::with_capacity(episodes);
    let mut failures = 0;
    for i in 0..episodes {
        let (mut e, mut obs) = Env::new(env.clone(), child_idx(seed, "eval-episode", i as u64))?;
        let mut total = 0.0;
        loop {
            let out = e.step(&policy.act(&obs))?;
            total += out.reward.total;
            if out.failure {
                failures += 1;
            }
            if out.done {
                break;
            }
            obs = out.obs;
        }
        returns.push(total);
    }
    let n = episodes as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    Ok(EvalResult {
        mean_return: mean,
        std_return: var.sqrt(),
        failure_rate: failures as f64 / n,
        normalized: None,
        episodes,
        seed,
        returns,
    })
}

/// `(score - random) / (expert - random)`.
pub fn normalize(score: f64, random_ref: f64, expert_ref: f64) -> Result<f64> {
    let span = expert_ref - random_ref;
    if !(span.abs() > 1e-12 * (1.0 + expert_ref.abs().max(random_ref.abs()))) || !span.is_finite() {
        return Err(Error::Contract(format!("degenerate normalization anchors {random_ref} and {expert_ref}")));
    }
    Ok((score - random_ref) / span)
}

/// Returns of the random-regime and expert-regime anchors on one env.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchors {
    pub random: f64,
    pub expert: f64,
}

impl Anchors {
    pub fn normalize(&self, score: f64) -> Result<f64> {
        normalize(score, self.random, self.expert)
    }
}
