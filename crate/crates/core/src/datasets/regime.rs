use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{collect, OfflineDataset};
use crate::envs::{EnvConfig, EnvKind};
use crate::error::{Error, Result};
use crate::mopo::PolicyNet;
use crate::nn::Checkpoint;
use crate::rng;

/// Competence level of the data-collecting policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Random,
    Medium,
    Expert,
    Mixed,
}

impl Regime {
    pub const ALL: [Regime; 4] = [Regime::Random, Regime::Medium, Regime::Expert, Regime::Mixed];

    pub fn name(self) -> &'static str {
        match self {
            Regime::Random => "random",
            Regime::Medium => "medium",
            Regime::Expert => "expert",
            Regime::Mixed => "mixed",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Regime::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown regime {s:?} (random, medium, expert, mixed)")))
    }
}

/// A policy snapshot saved during online training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceCheckpoint {
    pub stage: usize,
    pub iteration: usize,
    /// Deterministic-mode return on the true environment.
    pub mean_return: f64,
    pub path: PathBuf,
}

/// Ordered training-stage snapshots; the first is the untrained policy
/// and the last the fully trained one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSet {
    pub env_kind: EnvKind,
    pub stages: Vec<SourceCheckpoint>,
}

impl SourceSet {
    fn first(&self) -> Result<&SourceCheckpoint> {
        self.stages.first().ok_or_else(|| Error::NotFound("source set has no checkpoints".into()))
    }

    pub fn random(&self) -> Result<&SourceCheckpoint> {
        self.first()
    }

    pub fn expert(&self) -> Result<&SourceCheckpoint> {
        self.first()?;
        Ok(self.stages.last().unwrap())
    }

    /// The intermediate stage whose return is closest to one third of the
    /// way from the random to the expert return.
    pub fn medium(&self) -> Result<&SourceCheckpoint> {
        let (r, e) = (self.random()?.mean_return, self.expert()?.mean_return);
        let target = r + (e - r) / 3.0;
        let n = self.stages.len();
        let inner = if n > 2 { &self.stages[1..n - 1] } else { &self.stages[..] };
        Ok(inner
            .iter()
            .min_by(|a, b| (a.mean_return - target).abs().total_cmp(&(b.mean_return - target).abs()))
            .unwrap())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("source set serializes");
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::NotFound(format!("source set {}", path.display()))
            } else {
                Error::io(path, e)
            }
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("source set {}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetTypeSpec {
    pub regime: Regime,
    pub transitions: usize,
    pub sources: SourceSet,
    /// Gaussian action-noise std added while collecting.
    pub action_noise: f64,
    pub seed: u64,
}

fn load_policy(src: &SourceCheckpoint) -> Result<PolicyNet> {
    PolicyNet::from_checkpoint(&Checkpoint::load(&src.path)?)
}

/// Collects the dataset of one regime. `mixed` spends an equal share of
/// the budget on every stored stage (at least three are required).
pub fn build_regime(spec: &DatasetTypeSpec, cfg: &EnvConfig) -> Result<OfflineDataset> {
    if spec.sources.env_kind != cfg.kind {
        return Err(Error::Contract(format!(
            "sources were trained on {}, environment is {}",
            spec.sources.env_kind.name(),
            cfg.kind.name()
        )));
    }
    let single = |src: &SourceCheckpoint| -> Result<OfflineDataset> {
        let policy = load_policy(src)?;
        let tag = format!("{}@stage{}", spec.regime, src.stage);
        collect(cfg, &policy, spec.transitions, spec.action_noise, spec.seed, &tag)
    };
    match spec.regime {
        Regime::Random => single(spec.sources.random()?),
        Regime::Medium => single(spec.sources.medium()?),
        Regime::Expert => single(spec.sources.expert()?),
        Regime::Mixed => {
            let stages = &spec.sources.stages;
            let mut distinct: Vec<usize> = stages.iter().map(|s| s.stage).collect();
            distinct.sort_unstable();
            distinct.dedup();
            if distinct.len() < 3 {
                return Err(Error::Config(format!(
                    "mixed regime needs at least 3 distinct stages, got {}",
                    distinct.len()
                )));
            }
            let share = spec.transitions.div_ceil(stages.len()).max(cfg.episode_length);
            let parts = stages
                .iter()
                .enumerate()
                .map(|(i, src)| {
                    let policy = load_policy(src)?;
                    let seed = rng::child_idx(spec.seed, "stage", i as u64);
                    collect(cfg, &policy, share, spec.action_noise, seed, &format!("stage{}", src.stage))
                })
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&OfflineDataset> = parts.iter().collect();
            let mut meta = parts[0].meta.clone();
            meta.policy_tag = format!("mixed@stages{distinct:?}");
            meta.seed = spec.seed;
            OfflineDataset::concat(&refs, meta)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(returns: &[f64]) -> SourceSet {
        SourceSet {
            env_kind: EnvKind::PointMass,
            stages: returns
                .iter()
                .enumerate()
                .map(|(i, &r)| SourceCheckpoint { stage: i, iteration: i * 10, mean_return: r, path: PathBuf::from(format!("/nonexistent/{i}")) })
                .collect(),
        }
    }

    #[test]
    fn medium_is_the_third_way_stage() {
        let s = set(&[0.0, 10.0, 30.0, 60.0, 90.0]);
        assert_eq!(s.medium().unwrap().stage, 2);
        assert_eq!(s.random().unwrap().stage, 0);
        assert_eq!(s.expert().unwrap().stage, 4);
    }

    #[test]
    fn missing_checkpoint_is_not_found() {
        let spec = DatasetTypeSpec { regime: Regime::Expert, transitions: 1000, sources: set(&[0.0, 1.0, 2.0]), action_noise: 0.1, seed: 1 };
        assert!(matches!(build_regime(&spec, &EnvConfig::point_mass()), Err(Error::NotFound(_))));
    }

    #[test]
    fn names_round_trip() {
        for r in Regime::ALL {
            assert_eq!(r.name().parse::<Regime>().unwrap(), r);
        }
        assert!("medium-replay".parse::<Regime>().is_err());
    }
}
