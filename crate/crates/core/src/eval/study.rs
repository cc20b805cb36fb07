//! The scripted experiment protocols. Every cell records its seed so a
//! report can be regenerated from its provenance.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{evaluate, Anchors, EvalResult};
use crate::datasets::{build_regime, mix, DatasetTypeSpec, OfflineDataset, Regime, SourceCheckpoint, SourceSet};
use crate::envs::EnvConfig;
use crate::error::{Error, Result};
use crate::mopo::{train_policy, PolicyNet, PolicyTraining, PpoConfig};
use crate::nn::Checkpoint;
use crate::rng::child_idx;
use crate::world_model::{train, TrainConfig, WorldModel, WorldModelConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StudyKind {
    Lambda,
    Regimes,
    Mixture,
}

impl StudyKind {
    pub fn name(self) -> &'static str {
        match self {
            StudyKind::Lambda => "lambda",
            StudyKind::Regimes => "regimes",
            StudyKind::Mixture => "mixture",
        }
    }

    pub fn columns(self) -> &'static [&'static str] {
        match self {
            StudyKind::Lambda => &["lambda", "seed", "mean_return", "normalized", "failure_rate"],
            StudyKind::Regimes => &["regime", "variant", "seed", "normalized"],
            StudyKind::Mixture => &["sim_count", "real_count", "seed", "normalized", "failure_rate"],
        }
    }
}

impl std::str::FromStr for StudyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lambda" => Ok(StudyKind::Lambda),
            "regimes" => Ok(StudyKind::Regimes),
            "mixture" => Ok(StudyKind::Mixture),
            _ => Err(Error::Config(format!("unknown study {s:?} (lambda, regimes, mixture)"))),
        }
    }
}

/// Position of a cell on the study axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Axis {
    Lambda { lambda: f64 },
    Regime { regime: Regime, lambda: f64 },
    Mixture { sim_count: usize, real_count: usize },
}

/// Name of a regime-study variant: the default penalty or the
/// uncertainty-unaware ablation.
pub fn variant_name(lambda: f64) -> String {
    if lambda == 0.0 {
        "unaware".into()
    } else {
        format!("lambda={lambda}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyCell {
    pub axis: Axis,
    pub seed: u64,
    pub eval: EvalResult,
    /// Final imagination reward per step, scaled to an episode.
    pub imagination_return: f64,
    /// Mean epistemic uncertainty over all training iterations.
    pub mean_uncertainty: f64,
}

impl StudyCell {
    pub fn normalized(&self) -> f64 {
        self.eval.normalized.unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub env_hash: String,
    pub eval_env_hash: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub anchors: Anchors,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub kind: StudyKind,
    pub cells: Vec<StudyCell>,
    pub provenance: Provenance,
}

impl StudyReport {
    pub fn to_csv(&self) -> String {
        let mut s = self.kind.columns().join(",");
        s.push('\n');
        for c in &self.cells {
            let e = &c.eval;
            let norm = c.normalized();
            match &c.axis {
                Axis::Lambda { lambda } => {
                    writeln!(s, "{lambda},{},{},{norm},{}", c.seed, e.mean_return, e.failure_rate).unwrap();
                }
                Axis::Regime { regime, lambda } => {
                    writeln!(s, "{regime},{},{},{norm}", variant_name(*lambda), c.seed).unwrap();
                }
                Axis::Mixture { sim_count, real_count } => {
                    writeln!(s, "{sim_count},{real_count},{},{norm},{}", c.seed, e.failure_rate).unwrap();
                }
            }
        }
        s
    }

    /// Mean and population std of the normalized score over the cells
    /// selected by `pick`.
    pub fn summary(&self, pick: impl Fn(&Axis) -> bool) -> Option<(f64, f64)> {
        let v: Vec<f64> = self.cells.iter().filter(|c| pick(&c.axis)).map(StudyCell::normalized).collect();
        if v.is_empty() {
            return None;
        }
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64;
        Some((m, var.sqrt()))
    }

    pub fn mean_of(&self, pick: impl Fn(&Axis) -> bool, f: impl Fn(&StudyCell) -> f64) -> Option<f64> {
        let v: Vec<f64> = self.cells.iter().filter(|c| pick(&c.axis)).map(f).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Parses a study CSV back into rows of strings, checking the header.
pub fn parse_csv(kind: StudyKind, text: &str) -> Result<Vec<Vec<String>>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Format("empty CSV".into()))?;
    if header != kind.columns().join(",") {
        return Err(Error::Format(format!("unexpected {} header {header:?}", kind.name())));
    }
    let width = kind.columns().len();
    lines
        .map(|l| {
            let row: Vec<String> = l.split(',').map(str::to_string).collect();
            if row.len() == width {
                Ok(row)
            } else {
                Err(Error::Format(format!("row {l:?} has {} fields, expected {width}", row.len())))
            }
        })
        .collect()
}

/// Writes `<kind>.csv` and `<kind>.json` (full cells and provenance).
pub fn emit_report(report: &StudyReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv = dir.join(format!("{}.csv", report.kind.name()));
    std::fs::write(&csv, report.to_csv()).map_err(|e| Error::io(&csv, e))?;
    let json = dir.join(format!("{}.json", report.kind.name()));
    let text = serde_json::to_string_pretty(report).expect("report serializes");
    std::fs::write(&json, text).map_err(|e| Error::io(&json, e))?;
    Ok(vec![csv, json])
}

/// Everything a study needs besides its axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySettings {
    pub world_model: WorldModelConfig,
    pub wm_train: TrainConfig,
    pub ppo: PpoConfig,
    pub eval_episodes: usize,
    /// Transition budget of each regime dataset.
    pub transitions: usize,
    pub action_noise: f64,
    /// Root seed for datasets and world models.
    pub seed: u64,
}

impl StudySettings {
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let d = Sha256::digest(serde_json::to_string(self).expect("settings serialize").as_bytes());
        d[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Evaluates the random-regime and expert-regime collecting policies on
/// `env` to fix the normalization of every score measured there.
pub fn anchors(sources: &SourceSet, env: &EnvConfig, episodes: usize, seed: u64) -> Result<Anchors> {
    let load = |s: &SourceCheckpoint| PolicyNet::from_checkpoint(&Checkpoint::load(&s.path)?);
    let random = evaluate(&load(sources.random()?)?, env, episodes, seed)?.mean_return;
    let expert = evaluate(&load(sources.expert()?)?, env, episodes, seed)?.mean_return;
    let a = Anchors { random, expert };
    a.normalize(0.0)?;
    Ok(a)
}

/// Trains a world model on `ds` with the study settings.
pub fn fit_world_model(ds: &OfflineDataset, settings: &StudySettings, seed: u64) -> Result<WorldModel> {
    let mut model = WorldModel::for_dataset(settings.world_model.clone(), ds, seed)?;
    let cfg = TrainConfig { seed: child_idx(seed, "wm-train", 0), ..settings.wm_train.clone() };
    train(&mut model, ds, &cfg)?;
    Ok(model)
}

/// Trains one policy on the model and evaluates it on `eval_env`.
#[allow(clippy::too_many_arguments)]
pub fn policy_cell(
    model: &WorldModel,
    ds: &OfflineDataset,
    train_env: &EnvConfig,
    eval_env: &EnvConfig,
    settings: &StudySettings,
    lambda: f64,
    seed: u64,
    anchors: &Anchors,
    axis: Axis,
) -> Result<(StudyCell, PolicyTraining)> {
    let ppo = PpoConfig { lambda, seed, ..settings.ppo.clone() };
    let run = train_policy(model, ds, train_env, &ppo)?;
    let mut eval = evaluate(run.policy(), eval_env, settings.eval_episodes, child_idx(seed, "eval", 0))?;
    eval.normalized = Some(anchors.normalize(eval.mean_return)?);
    let k = (run.curves.len() / 10).max(1);
    let cell = StudyCell {
        axis,
        seed,
        eval,
        imagination_return: run.final_imagination_reward(k) / ppo.reward_scale(train_env) * train_env.episode_length as f64,
        mean_uncertainty: run.curves.iter().map(|c| c.mean_uncertainty).sum::<f64>() / run.curves.len().max(1) as f64,
    };
    Ok((cell, run))
}

/// One policy per `(λ, seed)` on a fixed model and dataset.
pub fn study_lambda(
    model: &WorldModel,
    ds: &OfflineDataset,
    env: &EnvConfig,
    lambdas: &[f64],
    seeds: &[u64],
    settings: &StudySettings,
    anchors: Anchors,
) -> Result<StudyReport> {
    let mut cells = Vec::with_capacity(lambdas.len() * seeds.len());
    for &lambda in lambdas {
        for &seed in seeds {
            cells.push(policy_cell(model, ds, env, env, settings, lambda, seed, &anchors, Axis::Lambda { lambda })?.0);
        }
    }
    Ok(StudyReport {
        kind: StudyKind::Lambda,
        cells,
        provenance: Provenance {
            env_hash: env.hash(),
            eval_env_hash: env.hash(),
            config_hash: settings.hash(),
            seeds: seeds.to_vec(),
            anchors,
        },
    })
}

/// One dataset and world model per regime, then one policy per
/// `(variant λ, seed)` on it.
pub fn study_regimes(
    env: &EnvConfig,
    sources: &SourceSet,
    regimes: &[Regime],
    variants: &[f64],
    seeds: &[u64],
    settings: &StudySettings,
    anchors: Anchors,
) -> Result<StudyReport> {
    let mut cells = Vec::new();
    for (i, &regime) in regimes.iter().enumerate() {
        let spec = DatasetTypeSpec {
            regime,
            transitions: settings.transitions,
            sources: sources.clone(),
            action_noise: settings.action_noise,
            seed: child_idx(settings.seed, "regime-data", i as u64),
        };
        let ds = build_regime(&spec, env)?;
        let model = fit_world_model(&ds, settings, child_idx(settings.seed, "regime-model", i as u64))?;
        for &lambda in variants {
            for &seed in seeds {
                cells.push(policy_cell(&model, &ds, env, env, settings, lambda, seed, &anchors, Axis::Regime { regime, lambda })?.0);
            }
        }
    }
    Ok(StudyReport {
        kind: StudyKind::Regimes,
        cells,
        provenance: Provenance {
            env_hash: env.hash(),
            eval_env_hash: env.hash(),
            config_hash: settings.hash(),
            seeds: seeds.to_vec(),
            anchors,
        },
    })
}

/// One mixed dataset and world model per `(sim, real)` budget, policies
/// trained in imagination and evaluated on the shifted (`real_env`)
/// dynamics. Rewards in imagination come from `sim_env`'s reward terms,
/// which the shift leaves unchanged.
#[allow(clippy::too_many_arguments)]
pub fn study_mixture(
    sim: &OfflineDataset,
    real: &OfflineDataset,
    grid: &[(usize, usize)],
    sim_env: &EnvConfig,
    real_env: &EnvConfig,
    seeds: &[u64],
    settings: &StudySettings,
    anchors: Anchors,
) -> Result<StudyReport> {
    let mut cells = Vec::new();
    for (i, &(sim_count, real_count)) in grid.iter().enumerate() {
        let ds = mix(sim, real, sim_count, real_count, child_idx(settings.seed, "mixture-data", i as u64))?;
        let model = fit_world_model(&ds, settings, child_idx(settings.seed, "mixture-model", i as u64))?;
        for &seed in seeds {
            let axis = Axis::Mixture { sim_count, real_count };
            cells.push(policy_cell(&model, &ds, sim_env, real_env, settings, settings.ppo.lambda, seed, &anchors, axis)?.0);
        }
    }
    Ok(StudyReport {
        kind: StudyKind::Mixture,
        cells,
        provenance: Provenance {
            env_hash: sim_env.hash(),
            eval_env_hash: real_env.hash(),
            config_hash: settings.hash(),
            seeds: seeds.to_vec(),
            anchors,
        },
    })
}

/// Runs online PPO on the true dynamics, saving a policy checkpoint after
/// each listed iteration under `dir` and recording its evaluated return.
pub fn build_sources(env: &EnvConfig, ppo: &PpoConfig, snapshot_at: &[usize], eval_episodes: usize, dir: &Path) -> Result<SourceSet> {
    let mut at: Vec<usize> = snapshot_at.to_vec();
    at.sort_unstable();
    at.dedup();
    if at.len() < 3 {
        return Err(Error::Config("at least three source snapshots are needed".into()));
    }
    let run = crate::mopo::train_online(env, ppo, &at)?;
    let mut stages = Vec::with_capacity(run.snapshots.len());
    for (stage, (iteration, policy)) in run.snapshots.iter().enumerate() {
        let eval = evaluate(policy, env, eval_episodes, child_idx(ppo.seed, "source-eval", 0))?;
        let path = dir.join(format!("source-{iteration:04}.ckpt"));
        let extra = serde_json::json!({ "online": ppo, "iteration": iteration });
        policy.to_checkpoint(ppo.seed, extra).save(&path)?;
        stages.push(SourceCheckpoint { stage, iteration: *iteration, mean_return: eval.mean_return, path });
    }
    Ok(SourceSet { env_kind: env.kind, stages })
}
