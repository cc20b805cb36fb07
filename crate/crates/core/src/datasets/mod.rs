//! Offline transition datasets: collection, the four dataset regimes,
//! sim/real mixing, persistence and `(M, N)` window sampling.

mod collect;
mod io;
mod mix;
mod regime;
pub(crate) mod window;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::envs::EnvKind;
use crate::error::{Error, Result};

pub use collect::collect;
pub use io::{load, save, DATASET_MAGIC};
pub use mix::mix;
pub use regime::{build_regime, DatasetTypeSpec, Regime, SourceCheckpoint, SourceSet};
pub use window::{count_windows, sample_windows, WindowBatch};

/// One episode stored flat: `observations` holds `len + 1` frames,
/// everything else holds `len` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    obs_dim: usize,
    act_dim: usize,
    observations: Vec<f64>,
    actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub failures: Vec<bool>,
}

impl Episode {
    pub fn new(obs_dim: usize, act_dim: usize, first_obs: &[f64]) -> Self {
        assert_eq!(first_obs.len(), obs_dim);
        Self {
            obs_dim,
            act_dim,
            observations: first_obs.to_vec(),
            actions: Vec::new(),
            rewards: Vec::new(),
            dones: Vec::new(),
            failures: Vec::new(),
        }
    }

    pub fn push(&mut self, action: &[f64], next_obs: &[f64], reward: f64, done: bool, failure: bool) {
        assert_eq!(action.len(), self.act_dim);
        assert_eq!(next_obs.len(), self.obs_dim);
        self.actions.extend_from_slice(action);
        self.observations.extend_from_slice(next_obs);
        self.rewards.push(reward);
        self.dones.push(done);
        self.failures.push(failure);
    }

    /// Number of transitions.
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    /// Number of observation frames (`len() + 1`).
    pub fn frames(&self) -> usize {
        self.len() + 1
    }

    pub fn obs(&self, t: usize) -> &[f64] {
        &self.observations[t * self.obs_dim..(t + 1) * self.obs_dim]
    }

    pub fn action(&self, t: usize) -> &[f64] {
        &self.actions[t * self.act_dim..(t + 1) * self.act_dim]
    }

    pub fn observations(&self) -> &[f64] {
        &self.observations
    }

    pub fn actions(&self) -> &[f64] {
        &self.actions
    }

    pub fn episode_return(&self) -> f64 {
        self.rewards.iter().sum()
    }

    pub(crate) fn from_parts(
        obs_dim: usize,
        act_dim: usize,
        observations: Vec<f64>,
        actions: Vec<f64>,
        rewards: Vec<f64>,
        dones: Vec<bool>,
        failures: Vec<bool>,
    ) -> Self {
        Self { obs_dim, act_dim, observations, actions, rewards, dones, failures }
    }

    fn check(&self) -> Result<()> {
        let l = self.len();
        let ok = self.observations.len() == (l + 1) * self.obs_dim
            && self.actions.len() == l * self.act_dim
            && self.dones.len() == l
            && self.failures.len() == l;
        if ok {
            Ok(())
        } else {
            Err(Error::Format("episode arrays disagree on length".into()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub env_kind: EnvKind,
    pub env_hash: String,
    /// Which collecting policy (or blend) produced the data.
    pub policy_tag: String,
    pub seed: u64,
    pub transitions: usize,
    /// `(sim share, real share)` when the dataset is a mixture.
    #[serde(default)]
    pub mix_ratio: Option<(f64, f64)>,
    /// Hash of the numeric payload; checked on load.
    #[serde(default)]
    pub hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfflineDataset {
    pub meta: DatasetMeta,
    episodes: Vec<Episode>,
    obs_dim: usize,
    act_dim: usize,
}

impl OfflineDataset {
    pub fn new(mut meta: DatasetMeta, obs_dim: usize, act_dim: usize, episodes: Vec<Episode>) -> Result<Self> {
        for e in &episodes {
            e.check()?;
            if e.obs_dim != obs_dim || e.act_dim != act_dim {
                return Err(Error::Dimension("episode dims differ from dataset dims".into()));
            }
        }
        meta.transitions = episodes.iter().map(Episode::len).sum();
        let mut ds = Self { meta, episodes, obs_dim, act_dim };
        ds.meta.hash = ds.compute_hash();
        Ok(ds)
    }

    pub fn episodes(&self) -> &[Episode] {
        &self.episodes
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    pub fn transitions(&self) -> usize {
        self.meta.transitions
    }

    pub fn mean_episode_return(&self) -> f64 {
        if self.episodes.is_empty() {
            return 0.0;
        }
        self.episodes.iter().map(Episode::episode_return).sum::<f64>() / self.episodes.len() as f64
    }

    /// SHA-256 over the payload in file order, truncated to 16 hex chars.
    pub fn compute_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.obs_dim as u64).to_le_bytes());
        h.update((self.act_dim as u64).to_le_bytes());
        for e in &self.episodes {
            h.update((e.len() as u64).to_le_bytes());
            io::for_each_payload_value(e, |v| h.update(v.to_le_bytes()));
        }
        h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Per-dimension (mean, std) of all observation frames and all actions.
    pub fn moments(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        fn stats(dim: usize, rows: impl Iterator<Item = Vec<f64>>) -> (Vec<f64>, Vec<f64>) {
            let mut n = 0.0_f64;
            let mut s = vec![0.0; dim];
            let mut s2 = vec![0.0; dim];
            for r in rows {
                n += 1.0;
                for i in 0..dim {
                    s[i] += r[i];
                    s2[i] += r[i] * r[i];
                }
            }
            let mean: Vec<f64> = s.iter().map(|v| v / n.max(1.0)).collect();
            let std = s2.iter().zip(&mean).map(|(v, m)| (v / n.max(1.0) - m * m).max(0.0).sqrt()).collect();
            (mean, std)
        }
        let (om, os) = stats(
            self.obs_dim,
            self.episodes.iter().flat_map(|e| (0..e.frames()).map(move |t| e.obs(t).to_vec())),
        );
        let (am, as_) = stats(
            self.act_dim,
            self.episodes.iter().flat_map(|e| (0..e.len()).map(move |t| e.action(t).to_vec())),
        );
        (om, os, am, as_)
    }

    /// Per-dimension (min, max) over all observation frames.
    pub fn obs_range(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![f64::INFINITY; self.obs_dim];
        let mut hi = vec![f64::NEG_INFINITY; self.obs_dim];
        for e in &self.episodes {
            for t in 0..e.frames() {
                for (i, &v) in e.obs(t).iter().enumerate() {
                    lo[i] = lo[i].min(v);
                    hi[i] = hi[i].max(v);
                }
            }
        }
        (lo, hi)
    }

    /// Concatenation of datasets with equal dimensions.
    pub fn concat(parts: &[&OfflineDataset], meta: DatasetMeta) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::Size("nothing to concatenate".into()))?;
        if parts.iter().any(|p| p.obs_dim != first.obs_dim || p.act_dim != first.act_dim) {
            return Err(Error::Dimension("datasets have different dimensions".into()));
        }
        let episodes = parts.iter().flat_map(|p| p.episodes.iter().cloned()).collect();
        Self::new(meta, first.obs_dim, first.act_dim, episodes)
    }
}
