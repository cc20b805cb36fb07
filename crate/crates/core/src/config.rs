//! Experiment configuration: presets, TOML files and command-line
//! overrides resolved into one tree, plus the run manifest.
//!
//! Resolution order is preset defaults < file values < overrides. Unknown
//! keys anywhere are errors naming the key; duplicate keys in a file are
//! rejected by the TOML parser.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datasets::Regime;
use crate::envs::{EnvConfig, EnvKind, ShiftSpec};
use crate::error::{Error, Result};
use crate::eval::StudySettings;
use crate::mopo::{NetConfig, PpoConfig};
use crate::world_model::{TrainConfig, WorldModelConfig};

/// Environment variable that replaces the root seed.
pub const SEED_ENV_VAR: &str = "RWMU_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Transitions per collected (sim) dataset.
    pub transitions: usize,
    /// Transitions of the held-out calibration dataset.
    pub held_out: usize,
    pub action_noise: f64,
    /// Regime of the main dataset used by single-run commands.
    pub regime: Regime,
    /// Shift preset name (none, mild, strong) defining the "real" system.
    /// Real data is collected by the expert source policy, as much as the
    /// largest real share of the mixture grid.
    pub shift: String,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            transitions: 200_000,
            held_out: 20_000,
            action_noise: 0.1,
            regime: Regime::Mixed,
            shift: "mild".into(),
        }
    }
}

/// Online PPO that produces the dataset-collecting policies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourcesConfig {
    pub agents: usize,
    pub steps: usize,
    pub iterations: usize,
    /// Iterations after which a snapshot is kept (0 = untrained).
    pub snapshots: Vec<usize>,
}

impl Default for SourcesConfig {
    fn default() -> Self {
        Self { agents: 64, steps: 100, iterations: 60, snapshots: vec![0, 1, 2, 3, 4, 5, 6, 8, 10, 12, 15, 20, 30, 40, 50, 60] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub episodes: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { episodes: 30 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub seeds: Vec<u64>,
    pub lambdas: Vec<f64>,
    pub regimes: Vec<Regime>,
    /// Penalty weights compared in the regime study (0 = unaware).
    pub variants: Vec<f64>,
    /// `[sim_count, real_count]` pairs.
    pub mixture: Vec<(usize, usize)>,
    pub calibration_depths: Vec<usize>,
    pub calibration_windows: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            seeds: vec![1, 2, 3],
            lambdas: vec![0.2, 0.5, 1.0, 2.0],
            regimes: Regime::ALL.to_vec(),
            variants: vec![1.0, 0.0],
            mixture: vec![(200_000, 0), (160_000, 40_000), (120_000, 80_000), (80_000, 120_000)],
            calibration_depths: vec![8, 16, 32],
            calibration_windows: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: String,
    pub seed: u64,
    pub env: EnvConfig,
    pub data: DataConfig,
    pub sources: SourcesConfig,
    pub world_model: WorldModelConfig,
    pub wm_train: TrainConfig,
    pub ppo: PpoConfig,
    pub eval: EvalConfig,
    pub study: StudyConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::quick(EnvKind::PointMass)
    }
}

impl ExperimentConfig {
    /// Desk-scale preset: minutes per run, three seeds.
    pub fn quick(kind: EnvKind) -> Self {
        Self {
            preset: "quick".into(),
            seed: 0,
            env: EnvConfig::for_kind(kind),
            data: DataConfig::default(),
            sources: SourcesConfig::default(),
            world_model: WorldModelConfig { gru_hidden: vec![32], head_hidden: vec![32], ..WorldModelConfig::default() },
            wm_train: TrainConfig { steps: 1500, batch: 64, lr: 1e-3, ..TrainConfig::default() },
            ppo: PpoConfig { agents: 256, steps: 32, iterations: 100, ..PpoConfig::default() },
            eval: EvalConfig::default(),
            study: StudyConfig::default(),
        }
    }

    /// Larger preset with budgets a few times larger.
    pub fn full(kind: EnvKind) -> Self {
        let q = Self::quick(kind);
        Self {
            preset: "full".into(),
            data: DataConfig { transitions: 1_000_000, held_out: 50_000, ..q.data },
            sources: SourcesConfig { agents: 128, iterations: 120, snapshots: vec![0, 1, 2, 3, 4, 6, 8, 12, 20, 40, 80, 120], ..q.sources },
            world_model: WorldModelConfig::default(),
            wm_train: TrainConfig { steps: 10_000, batch: 256, lr: 5e-4, ..q.wm_train },
            ppo: PpoConfig { agents: 1024, steps: 100, iterations: 1000, net: NetConfig::default(), ..q.ppo },
            eval: EvalConfig { episodes: 50 },
            study: StudyConfig {
                seeds: vec![1, 2, 3, 4, 5],
                mixture: vec![(1_000_000, 0), (800_000, 200_000), (600_000, 400_000), (400_000, 600_000)],
                ..q.study
            },
            ..q
        }
    }

    pub fn preset(name: &str, kind: EnvKind) -> Result<Self> {
        match name {
            "quick" => Ok(Self::quick(kind)),
            "full" => Ok(Self::full(kind)),
            other => Err(Error::Config(format!("unknown preset {other:?} (quick | full)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.world_model.validate()?;
        self.ppo.validate()?;
        ShiftSpec::preset(&self.data.shift)?;
        if self.study.seeds.is_empty() || self.eval.episodes == 0 {
            return Err(Error::Config("study.seeds and eval.episodes must be non-empty".into()));
        }
        if self.wm_train.steps == 0 || self.wm_train.batch == 0 {
            return Err(Error::Config("wm_train.steps and wm_train.batch must be positive".into()));
        }
        Ok(())
    }

    /// The shifted environment standing in for the real system.
    pub fn real_env(&self) -> Result<EnvConfig> {
        ShiftSpec::preset(&self.data.shift)?.apply(&self.env)
    }

    /// Online PPO settings for the dataset-collecting source policies.
    pub fn source_ppo(&self) -> PpoConfig {
        PpoConfig {
            lambda: 0.0,
            agents: self.sources.agents,
            steps: self.sources.steps,
            iterations: self.sources.iterations,
            seed: crate::rng::child(self.seed, "sources"),
            ..self.ppo.clone()
        }
    }

    pub fn study_settings(&self) -> StudySettings {
        StudySettings {
            world_model: self.world_model.clone(),
            wm_train: TrainConfig { seed: self.seed, ..self.wm_train.clone() },
            ppo: self.ppo.clone(),
            eval_episodes: self.eval.episodes,
            transitions: self.data.transitions,
            action_noise: self.data.action_noise,
            seed: self.seed,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        hash_text(&self.to_toml())
    }
}

pub fn hash_text(text: &str) -> String {
    Sha256::digest(text.as_bytes())[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parses an override value as TOML, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_path(root: &mut toml::Value, path: &str, value: toml::Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, p) in parts.iter().enumerate() {
        let table = cur.as_table_mut().ok_or_else(|| Error::Config(format!("override {path}: {p} is not a section")))?;
        if i + 1 == parts.len() {
            table.insert((*p).to_string(), value);
            return Ok(());
        }
        cur = table.entry((*p).to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    Ok(())
}

fn lookup<'a>(t: &'a toml::Table, path: &[&str]) -> Option<&'a toml::Value> {
    let (first, rest) = path.split_first()?;
    let v = t.get(*first)?;
    if rest.is_empty() {
        Some(v)
    } else {
        lookup(v.as_table()?, rest)
    }
}

/// Resolves the configuration from `text` (a TOML document, possibly
/// empty) and dotted-path overrides such as `("ppo.lambda", "0.5")`.
/// `seed_env` replaces the root seed when given.
pub fn resolve(text: &str, overrides: &[(String, String)], seed_env: Option<&str>) -> Result<ExperimentConfig> {
    let file: toml::Table = toml::from_str(text).map_err(|e| Error::Config(format!("config file: {e}")))?;
    let mut over = toml::Value::Table(toml::Table::new());
    for (k, v) in overrides {
        set_path(&mut over, k, parse_value(v))?;
    }
    let over_table = over.as_table().expect("table").clone();
    let pick = |path: &[&str]| lookup(&over_table, path).or_else(|| lookup(&file, path)).cloned();
    let preset = match pick(&["preset"]) {
        Some(toml::Value::String(s)) => s,
        Some(other) => return Err(Error::Config(format!("preset must be a string, got {other}"))),
        None => "quick".into(),
    };
    let kind: EnvKind = match pick(&["env", "kind"]) {
        Some(toml::Value::String(s)) => s.parse()?,
        Some(other) => return Err(Error::Config(format!("env.kind must be a string, got {other}"))),
        None => EnvKind::PointMass,
    };
    let base = ExperimentConfig::preset(&preset, kind)?;
    let mut tree = toml::Value::try_from(&base).map_err(|e| Error::Config(e.to_string()))?;
    merge(&mut tree, toml::Value::Table(file));
    merge(&mut tree, over);
    if let Some(seed) = seed_env {
        let s: u64 = seed.trim().parse().map_err(|_| Error::Config(format!("{SEED_ENV_VAR}={seed:?} is not an unsigned integer")))?;
        set_path(&mut tree, "seed", toml::Value::Integer(s as i64))?;
    }
    let cfg: ExperimentConfig = tree.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// [`resolve`] on a file; a missing file is a not-found error.
pub fn load_config(path: &Path, overrides: &[(String, String)]) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::NotFound(format!("config file {}", path.display()))
        } else {
            Error::io(path, e)
        }
    })?;
    resolve(&text, overrides, std::env::var(SEED_ENV_VAR).ok().as_deref())
}

/// Record of one command invocation, written before the work starts and
/// completed with the produced artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub command: String,
    /// Command-line arguments after the subcommand, without `--out`.
    pub args: Vec<String>,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub seed: u64,
    pub artifacts: Vec<String>,
    pub tool_version: String,
}

impl ExperimentManifest {
    pub fn new(command: &str, args: Vec<String>, config: &ExperimentConfig) -> Self {
        Self {
            command: command.into(),
            args,
            config_hash: config.hash(),
            config: config.clone(),
            seed: config.seed,
            artifacts: Vec::new(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, serde_json::to_string_pretty(self).expect("manifest serializes")).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("manifest {}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ov(k: &str, v: &str) -> (String, String) {
        (k.into(), v.into())
    }

    #[test]
    fn empty_file_gives_preset_defaults() {
        let c = resolve("", &[], None).unwrap();
        assert_eq!((c.world_model.history, c.world_model.horizon, c.world_model.ensemble), (32, 8, 5));
        assert_eq!((c.ppo.gamma, c.ppo.clip, c.ppo.lambda), (0.99, 0.2, 1.0));
        assert_eq!(c, ExperimentConfig::quick(EnvKind::PointMass));
    }

    #[test]
    fn overrides_beat_file_values() {
        let c = resolve("[world_model]\nensemble = 3\n", &[ov("world_model.ensemble", "2")], None).unwrap();
        assert_eq!(c.world_model.ensemble, 2);
        let c = resolve("[ppo]\nlambda = 0.5\n", &[], None).unwrap();
        assert_eq!(c.ppo.lambda, 0.5);
    }

    #[test]
    fn unknown_and_duplicate_keys_are_errors() {
        let e = resolve("[ppo]\nlamda = 0.5\n", &[], None).unwrap_err();
        assert!(e.is_config() && e.to_string().contains("lamda"), "{e}");
        let e = resolve("seed = 1\nseed = 2\n", &[], None).unwrap_err();
        assert!(e.is_config());
        assert!(resolve("", &[ov("bogus.key", "1")], None).unwrap_err().to_string().contains("bogus"));
    }

    #[test]
    fn env_kind_switches_the_base_and_seed_variable_wins() {
        let c = resolve("[env]\nkind = \"pendulum\"\n", &[], Some("42")).unwrap();
        assert_eq!(c.env, EnvConfig::pendulum());
        assert_eq!(c.seed, 42);
        assert!(resolve("", &[], Some("x")).unwrap_err().is_config());
    }

    #[test]
    fn presets_round_trip_through_toml() {
        for p in ["quick", "full"] {
            let c = ExperimentConfig::preset(p, EnvKind::PointMass).unwrap();
            assert_eq!(resolve(&c.to_toml(), &[], None).unwrap(), c);
        }
    }
}
