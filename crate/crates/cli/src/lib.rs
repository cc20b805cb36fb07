//! The `rwmu` command line: seeded experiment runs over a fixed output
//! layout, each leaving a manifest that can be replayed.
//!
//! ```text
//! <out>/datasets/   collected transition datasets
//! <out>/models/     world-model checkpoints
//! <out>/policies/   source and trained policy checkpoints
//! <out>/reports/    CSV and JSON reports
//! <out>/manifests/  one manifest per command
//! ```

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use rwmu_core::config::{self, ExperimentConfig, ExperimentManifest};
use rwmu_core::datasets::{self, build_regime, collect, DatasetTypeSpec, OfflineDataset, Regime, SourceSet};
use rwmu_core::envs::EnvConfig;
use rwmu_core::eval::{
    anchors, build_sources, emit_report, evaluate, fit_world_model, policy_cell, study_lambda, study_mixture, study_regimes, Anchors,
    Axis, Provenance, StudyKind, StudyReport,
};
use rwmu_core::mopo::{curves_csv, PolicyNet, PpoConfig};
use rwmu_core::nn::Checkpoint;
use rwmu_core::rng::{child, child_idx};
use rwmu_core::world_model::{calibration_report, WorldModel};
use rwmu_core::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "rwmu", version, about = "Offline model-based RL with uncertainty-aware world models on toy control tasks")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Output directory.
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,
    /// TOML config file layered over the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dotted override, e.g. `--set ppo.lambda=0.5` (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Preset: quick or full.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Root seed (`RWMU_SEED` in the environment also works).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Ensemble size of the world model.
    #[arg(long, global = true)]
    ensemble: Option<usize>,
    /// Environment kind: point-mass or pendulum.
    #[arg(long, global = true)]
    env: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train source policies if needed and collect a regime dataset.
    Collect {
        #[arg(long)]
        regime: Option<String>,
        /// Collect with the expert source policy on the shifted system.
        #[arg(long)]
        real: bool,
    },
    /// Train a world model on a dataset.
    TrainWm {
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Autoregressive error and uncertainty per rollout depth.
    Calibrate {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Train a policy purely in imagination.
    TrainPolicy {
        /// Uncertainty penalty weight.
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Evaluate a policy checkpoint on the true dynamics.
    Eval {
        #[arg(long)]
        policy: PathBuf,
        /// Evaluate on the shifted system.
        #[arg(long)]
        shifted: bool,
    },
    /// Run one of the scripted studies.
    Study {
        #[arg(value_parser = ["lambda", "regimes", "mixture"])]
        kind: String,
    },
    /// Rewrite study CSVs from their JSON and print a summary.
    Report,
    /// Sources, dataset, world model, calibration, one policy, evaluation
    /// and report in one go.
    Pipeline,
    /// Rerun the command recorded in a manifest with its resolved config.
    Replay {
        manifest: PathBuf,
    },
}

impl Command {
    fn name(&self) -> String {
        match self {
            Command::Collect { .. } => "collect".into(),
            Command::TrainWm { .. } => "train-wm".into(),
            Command::Calibrate { .. } => "calibrate".into(),
            Command::TrainPolicy { .. } => "train-policy".into(),
            Command::Eval { .. } => "eval".into(),
            Command::Study { kind } => format!("study-{kind}"),
            Command::Report => "report".into(),
            Command::Pipeline => "pipeline".into(),
            Command::Replay { .. } => "replay".into(),
        }
    }
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_config() {
            Failure::Config(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

/// Runs the CLI on `argv` (program name first) and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                        EXIT_CONFIG
                    } else {
                        EXIT_OK
                    }
                }
                _ => EXIT_CONFIG,
            };
            let _ = e.print();
            return code;
        }
    };
    let args: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match dispatch(cli, args) {
        Ok(()) => EXIT_OK,
        Err(Failure::Config(m)) => {
            eprintln!("rwmu: {m}");
            EXIT_CONFIG
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("rwmu: {m}");
            EXIT_RUNTIME
        }
    }
}

fn overrides(g: &Global) -> Outcome<Vec<(String, String)>> {
    let mut out = Vec::new();
    if let Some(p) = &g.preset {
        out.push(("preset".into(), format!("{p:?}")));
    }
    if let Some(e) = &g.env {
        out.push(("env.kind".into(), format!("{e:?}")));
    }
    for s in &g.set {
        let (k, v) = s.split_once('=').ok_or_else(|| Failure::Config(format!("--set expects KEY=VALUE, got {s:?}")))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    if let Some(b) = g.ensemble {
        out.push(("world_model.ensemble".into(), b.to_string()));
    }
    if let Some(s) = g.seed {
        out.push(("seed".into(), s.to_string()));
    }
    Ok(out)
}

fn resolve(g: &Global) -> Outcome<ExperimentConfig> {
    let ov = overrides(g)?;
    let cfg = match &g.config {
        Some(path) => config::load_config(path, &ov).map_err(|e| match e {
            Error::NotFound(m) => Failure::Config(format!("not found: {m}")),
            e => e.into(),
        })?,
        None => {
            let seed_env = std::env::var(config::SEED_ENV_VAR).ok();
            // an explicit --seed beats the environment variable
            let seed_env = if g.seed.is_some() { None } else { seed_env };
            config::resolve("", &ov, seed_env.as_deref())?
        }
    };
    Ok(cfg)
}

fn dispatch(cli: Cli, args: Vec<String>) -> Outcome<()> {
    if let Command::Replay { manifest } = &cli.command {
        let m = ExperimentManifest::load(manifest)?;
        m.config.validate()?;
        let mut argv = vec!["rwmu".to_string()];
        argv.extend(m.args.iter().cloned());
        let replayed = Cli::try_parse_from(&argv).map_err(|e| Failure::Config(format!("manifest arguments: {e}")))?;
        if matches!(replayed.command, Command::Replay { .. }) {
            return Err(Failure::Config("a replay manifest cannot be replayed".into()));
        }
        let ctx = Ctx::new(cli.global.out.clone(), m.config);
        return execute(&ctx, &replayed.command, m.args);
    }
    let cfg = resolve(&cli.global)?;
    let ctx = Ctx::new(cli.global.out.clone(), cfg);
    execute(&ctx, &cli.command, args)
}

fn execute(ctx: &Ctx, command: &Command, args: Vec<String>) -> Outcome<()> {
    let mut manifest = ExperimentManifest::new(&command.name(), args, &ctx.cfg);
    let manifest_path = ctx.dir("manifests")?.join(format!("{}.json", command.name()));
    manifest.save(&manifest_path)?;
    let artifacts = match command {
        Command::Collect { regime, real } => cmd_collect(ctx, regime.as_deref(), *real)?,
        Command::TrainWm { dataset } => cmd_train_wm(ctx, dataset.as_deref())?,
        Command::Calibrate { model, dataset } => cmd_calibrate(ctx, model.as_deref(), dataset.as_deref())?,
        Command::TrainPolicy { lambda, model, dataset } => cmd_train_policy(ctx, *lambda, model.as_deref(), dataset.as_deref())?,
        Command::Eval { policy, shifted } => cmd_eval(ctx, policy, *shifted)?,
        Command::Study { kind } => cmd_study(ctx, kind.parse()?)?,
        Command::Report => cmd_report(ctx)?,
        Command::Pipeline => cmd_pipeline(ctx)?,
        Command::Replay { .. } => unreachable!("handled in dispatch"),
    };
    manifest.artifacts = artifacts.iter().map(|p| p.display().to_string()).collect();
    manifest.save(&manifest_path)?;
    Ok(())
}

struct Ctx {
    out: PathBuf,
    cfg: ExperimentConfig,
}

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

fn write(path: &Path, text: &str) -> Outcome<()> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

impl Ctx {
    fn new(out: PathBuf, cfg: ExperimentConfig) -> Self {
        Self { out, cfg }
    }

    fn dir(&self, sub: &str) -> Outcome<PathBuf> {
        let d = self.out.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| io_err(&d, e))?;
        Ok(d)
    }

    fn env(&self) -> &EnvConfig {
        &self.cfg.env
    }

    fn real_env(&self) -> Outcome<EnvConfig> {
        Ok(self.cfg.real_env()?)
    }

    /// Source policies are keyed by everything that shapes them, so a run
    /// directory can hold several configurations.
    fn sources(&self) -> Outcome<SourceSet> {
        let ppo = self.cfg.source_ppo();
        let key = config::hash_text(&format!(
            "{}{}{:?}{}",
            self.env().hash(),
            serde_json::to_string(&ppo).expect("serializes"),
            self.cfg.sources.snapshots,
            self.cfg.eval.episodes
        ));
        let dir = self.dir("policies")?.join(format!("sources-{key}"));
        let index = dir.join("sources.json");
        if index.exists() {
            return Ok(SourceSet::load(&index)?);
        }
        eprintln!("training source policies ({} online iterations)", ppo.iterations);
        let set = build_sources(self.env(), &ppo, &self.cfg.sources.snapshots, self.cfg.eval.episodes, &dir)?;
        set.save(&index)?;
        Ok(set)
    }

    fn anchors_on(&self, sources: &SourceSet, env: &EnvConfig) -> Outcome<Anchors> {
        Ok(anchors(sources, env, self.cfg.eval.episodes, child(self.cfg.seed, "anchors"))?)
    }

    fn dataset_path(&self, name: &str) -> Outcome<PathBuf> {
        Ok(self.dir("datasets")?.join(format!("{name}.rwd")))
    }

    fn model_path(&self, name: &str) -> Outcome<PathBuf> {
        Ok(self.dir("models")?.join(format!("wm-{name}.ckpt")))
    }

    fn regime_dataset(&self, sources: &SourceSet, regime: Regime, transitions: usize, label: &str) -> Outcome<OfflineDataset> {
        let spec = DatasetTypeSpec {
            regime,
            transitions,
            sources: sources.clone(),
            action_noise: self.cfg.data.action_noise,
            seed: child(self.cfg.seed, &format!("{label}-{regime}")),
        };
        Ok(build_regime(&spec, self.env())?)
    }

    fn real_dataset(&self, sources: &SourceSet) -> Outcome<Option<OfflineDataset>> {
        let n = self.cfg.study.mixture.iter().map(|&(_, r)| r).max().unwrap_or(0);
        if n == 0 {
            return Ok(None);
        }
        let expert = PolicyNet::from_checkpoint(&Checkpoint::load(&sources.expert()?.path)?)?;
        let real = self.real_env()?;
        let n = n.max(real.episode_length);
        Ok(Some(collect(&real, &expert, n, self.cfg.data.action_noise, child(self.cfg.seed, "real-data"), "expert@real")?))
    }

    fn load_dataset(&self, path: Option<&Path>) -> Outcome<(OfflineDataset, PathBuf)> {
        let path = match path {
            Some(p) => p.to_path_buf(),
            None => self.dataset_path(self.cfg.data.regime.name())?,
        };
        let ds = datasets::load(&path).map_err(|e| match e {
            Error::Io { .. } | Error::NotFound(_) => Failure::Runtime(format!("{e} (run `rwmu collect` first)")),
            e => e.into(),
        })?;
        Ok((ds, path))
    }

    fn load_model(&self, path: Option<&Path>) -> Outcome<(WorldModel, PathBuf)> {
        let path = match path {
            Some(p) => p.to_path_buf(),
            None => self.model_path(self.cfg.data.regime.name())?,
        };
        let model = WorldModel::from_checkpoint(&Checkpoint::load(&path)?)?;
        Ok((model, path))
    }
}

fn cmd_collect(ctx: &Ctx, regime: Option<&str>, real: bool) -> Outcome<Vec<PathBuf>> {
    let sources = ctx.sources()?;
    let mut out = Vec::new();
    if real {
        let ds = ctx.real_dataset(&sources)?.ok_or_else(|| Failure::Config("the mixture grid asks for no real data".into()))?;
        let path = ctx.dataset_path("real")?;
        datasets::save(&ds, &path)?;
        eprintln!("{} real transitions -> {}", ds.transitions(), path.display());
        out.push(path);
        return Ok(out);
    }
    let regime: Regime = match regime {
        Some(r) => r.parse()?,
        None => ctx.cfg.data.regime,
    };
    for (label, n, name) in [
        ("data", ctx.cfg.data.transitions, regime.name().to_string()),
        ("held-out", ctx.cfg.data.held_out, format!("{regime}-heldout")),
    ] {
        let ds = ctx.regime_dataset(&sources, regime, n, label)?;
        let path = ctx.dataset_path(&name)?;
        datasets::save(&ds, &path)?;
        eprintln!("{} transitions (mean episode return {:.2}) -> {}", ds.transitions(), ds.mean_episode_return(), path.display());
        out.push(path);
    }
    Ok(out)
}

fn train_wm(ctx: &Ctx, ds: &OfflineDataset, name: &str) -> Outcome<PathBuf> {
    let settings = ctx.cfg.study_settings();
    let model = fit_world_model(ds, &settings, child(ctx.cfg.seed, "world-model"))?;
    let path = ctx.model_path(name)?;
    model.to_checkpoint().save(&path)?;
    Ok(path)
}

fn cmd_train_wm(ctx: &Ctx, dataset: Option<&Path>) -> Outcome<Vec<PathBuf>> {
    let (ds, ds_path) = ctx.load_dataset(dataset)?;
    let name = ds_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into());
    let path = train_wm(ctx, &ds, &name)?;
    eprintln!("world model -> {}", path.display());
    Ok(vec![path])
}

fn calibrate(ctx: &Ctx, model: &WorldModel, held_out: &OfflineDataset) -> Outcome<PathBuf> {
    let s = &ctx.cfg.study;
    let report = calibration_report(model, held_out, &s.calibration_depths, s.calibration_windows, child(ctx.cfg.seed, "calibration"))?;
    let mut text = String::from("depth,abs_error,epistemic,aleatoric,pearson,spearman\n");
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.9e}")).unwrap_or_default();
    for r in &report.rows {
        writeln!(
            text,
            "{},{:.9e},{:.9e},{:.9e},{},{}",
            r.depth,
            r.abs_error,
            r.epistemic,
            r.aleatoric,
            fmt(r.pearson),
            fmt(r.spearman)
        )
        .unwrap();
    }
    let path = ctx.dir("reports")?.join("calibration.csv");
    write(&path, &text)?;
    eprint!("{text}");
    Ok(path)
}

fn cmd_calibrate(ctx: &Ctx, model: Option<&Path>, dataset: Option<&Path>) -> Outcome<Vec<PathBuf>> {
    let (model, _) = ctx.load_model(model)?;
    let held = match dataset {
        Some(p) => p.to_path_buf(),
        None => ctx.dataset_path(&format!("{}-heldout", ctx.cfg.data.regime))?,
    };
    let (held_out, _) = ctx.load_dataset(Some(&held))?;
    Ok(vec![calibrate(ctx, &model, &held_out)?])
}

/// Trains one policy, saves it with its curves and returns the cell.
fn policy_run(ctx: &Ctx, model: &WorldModel, ds: &OfflineDataset, lambda: f64, anchors: &Anchors) -> Outcome<(StudyReport, Vec<PathBuf>)> {
    let settings = ctx.cfg.study_settings();
    let seed = child(ctx.cfg.seed, "policy");
    let env = ctx.env();
    let (cell, run) = policy_cell(model, ds, env, env, &settings, lambda, seed, anchors, Axis::Lambda { lambda })?;
    let tag = rwmu_core::eval::variant_name(lambda).replace('=', "");
    let policy_path = ctx.dir("policies")?.join(format!("policy-{tag}.ckpt"));
    let extra = serde_json::json!({ "ppo": PpoConfig { lambda, seed, ..settings.ppo.clone() } });
    run.policy().to_checkpoint(seed, extra).save(&policy_path)?;
    let curves_path = ctx.dir("reports")?.join(format!("curves-{tag}.csv"));
    write(&curves_path, &curves_csv(&run.curves))?;
    eprintln!(
        "lambda {lambda}: true return {:.2} (normalized {:.3}), imagination {:.2}",
        cell.eval.mean_return,
        cell.normalized(),
        cell.imagination_return
    );
    let report = StudyReport {
        kind: StudyKind::Lambda,
        cells: vec![cell],
        provenance: Provenance {
            env_hash: env.hash(),
            eval_env_hash: env.hash(),
            config_hash: ctx.cfg.hash(),
            seeds: vec![seed],
            anchors: *anchors,
        },
    };
    Ok((report, vec![policy_path, curves_path]))
}

fn cmd_train_policy(ctx: &Ctx, lambda: Option<f64>, model: Option<&Path>, dataset: Option<&Path>) -> Outcome<Vec<PathBuf>> {
    let lambda = lambda.unwrap_or(ctx.cfg.ppo.lambda);
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Failure::Config(format!("--lambda must be a finite non-negative number, got {lambda}")));
    }
    let (ds, _) = ctx.load_dataset(dataset)?;
    let (model, _) = ctx.load_model(model)?;
    let sources = ctx.sources()?;
    let anchors = ctx.anchors_on(&sources, ctx.env())?;
    Ok(policy_run(ctx, &model, &ds, lambda, &anchors)?.1)
}

fn cmd_eval(ctx: &Ctx, policy: &Path, shifted: bool) -> Outcome<Vec<PathBuf>> {
    let net = PolicyNet::from_checkpoint(&Checkpoint::load(policy)?)?;
    let env = if shifted { ctx.real_env()? } else { ctx.env().clone() };
    let mut result = evaluate(&net, &env, ctx.cfg.eval.episodes, child(ctx.cfg.seed, "eval"))?;
    let sources = ctx.sources()?;
    result.normalized = Some(ctx.anchors_on(&sources, &env)?.normalize(result.mean_return)?);
    let stem = policy.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "policy".into());
    let path = ctx.dir("reports")?.join(format!("eval-{stem}{}.json", if shifted { "-shifted" } else { "" }));
    write(&path, &serde_json::to_string_pretty(&result).expect("serializes"))?;
    println!(
        "mean return {:.3} ± {:.3}, normalized {:.3}, failure rate {:.3}",
        result.mean_return,
        result.std_return,
        result.normalized.unwrap_or(f64::NAN),
        result.failure_rate
    );
    Ok(vec![path])
}

fn cmd_study(ctx: &Ctx, kind: StudyKind) -> Outcome<Vec<PathBuf>> {
    let cfg = &ctx.cfg;
    let settings = cfg.study_settings();
    let sources = ctx.sources()?;
    let seeds: Vec<u64> = cfg.study.seeds.iter().map(|&s| child_idx(cfg.seed, "study-seed", s)).collect();
    let report = match kind {
        StudyKind::Lambda => {
            let ds = ctx.regime_dataset(&sources, cfg.data.regime, cfg.data.transitions, "data")?;
            let model = fit_world_model(&ds, &settings, child(cfg.seed, "world-model"))?;
            let a = ctx.anchors_on(&sources, ctx.env())?;
            study_lambda(&model, &ds, ctx.env(), &cfg.study.lambdas, &seeds, &settings, a)?
        }
        StudyKind::Regimes => {
            let a = ctx.anchors_on(&sources, ctx.env())?;
            study_regimes(ctx.env(), &sources, &cfg.study.regimes, &cfg.study.variants, &seeds, &settings, a)?
        }
        StudyKind::Mixture => {
            let max_sim = cfg.study.mixture.iter().map(|&(s, _)| s).max().unwrap_or(0);
            let sim = ctx.regime_dataset(&sources, cfg.data.regime, max_sim.max(cfg.env.episode_length), "data")?;
            let real = ctx.real_dataset(&sources)?.ok_or_else(|| Failure::Config("the mixture grid asks for no real data".into()))?;
            let real_env = ctx.real_env()?;
            let a = ctx.anchors_on(&sources, &real_env)?;
            study_mixture(&sim, &real, &cfg.study.mixture, ctx.env(), &real_env, &seeds, &settings, a)?
        }
    };
    let paths = emit_report(&report, &ctx.dir("reports")?)?;
    print!("{}", summarize(&report));
    Ok(paths)
}

/// Mean ± std of the normalized score per axis value, in first-seen order.
pub fn summarize(report: &StudyReport) -> String {
    let mut axes: Vec<&Axis> = Vec::new();
    for c in &report.cells {
        if !axes.contains(&&c.axis) {
            axes.push(&c.axis);
        }
    }
    let mut s = format!("{} study\n", report.kind.name());
    for axis in axes {
        let (m, sd) = report.summary(|a| a == axis).expect("axis has cells");
        let label = match axis {
            Axis::Lambda { lambda } => format!("lambda={lambda}"),
            Axis::Regime { regime, lambda } => format!("{regime} {}", rwmu_core::eval::variant_name(*lambda)),
            Axis::Mixture { sim_count, real_count } => format!("{sim_count}/{real_count}"),
        };
        writeln!(s, "  {label:<24} normalized {m:.3} ± {sd:.3}").unwrap();
    }
    s
}

fn cmd_report(ctx: &Ctx) -> Outcome<Vec<PathBuf>> {
    let dir = ctx.dir("reports")?;
    let mut paths = Vec::new();
    let mut text = String::new();
    for kind in [StudyKind::Lambda, StudyKind::Regimes, StudyKind::Mixture] {
        let json = dir.join(format!("{}.json", kind.name()));
        if !json.exists() {
            continue;
        }
        let raw = std::fs::read_to_string(&json).map_err(|e| io_err(&json, e))?;
        let report: StudyReport = serde_json::from_str(&raw).map_err(|e| Failure::Runtime(format!("{}: {e}", json.display())))?;
        paths.extend(emit_report(&report, &dir)?);
        text.push_str(&summarize(&report));
    }
    if paths.is_empty() {
        return Err(Failure::Runtime(format!("no study reports under {}", dir.display())));
    }
    let summary = dir.join("summary.txt");
    write(&summary, &text)?;
    print!("{text}");
    paths.push(summary);
    Ok(paths)
}

fn cmd_pipeline(ctx: &Ctx) -> Outcome<Vec<PathBuf>> {
    let mut paths = cmd_collect(ctx, None, false)?;
    let regime = ctx.cfg.data.regime;
    let (ds, _) = ctx.load_dataset(None)?;
    let (held_out, _) = ctx.load_dataset(Some(&ctx.dataset_path(&format!("{regime}-heldout"))?))?;
    let model_path = train_wm(ctx, &ds, regime.name())?;
    let (model, _) = ctx.load_model(Some(&model_path))?;
    paths.push(model_path);
    paths.push(calibrate(ctx, &model, &held_out)?);
    let sources = ctx.sources()?;
    let anchors = ctx.anchors_on(&sources, ctx.env())?;
    let (report, mut more) = policy_run(ctx, &model, &ds, ctx.cfg.ppo.lambda, &anchors)?;
    paths.append(&mut more);
    paths.extend(emit_report(&report, &ctx.dir("reports")?)?);
    print!("{}", summarize(&report));
    Ok(paths)
}
