//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! The learning criteria drive the `rwmu` commands on the quick preset in
//! one scratch directory, so source policies are trained once and shared.
//! Expect a multi-hour run on a single core. Set `RWMU_ACCEPT_KEEP=1` to
//! keep the scratch directory, `RWMU_ACCEPT_ONLY=4,9` to run a subset and
//! `RWMU_ACCEPT_STRICT=1` to exit non-zero when any criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::Rng as _;
use rwmu_cli::{run, EXIT_OK};
use rwmu_core::datasets::{sample_windows, Regime};
use rwmu_core::envs::true_steps_on_this_thread;
use rwmu_core::eval::{Axis, StudyReport};
use rwmu_core::mopo::{gae, imagine, init_actor_critic, train_policy, NetConfig, PpoConfig};
use rwmu_core::nn::{gaussian_nll_rows, Activation, Backend, Gru, Mlp, Tape, Tensor};
use rwmu_core::rng;
use rwmu_core::world_model::BatchRollout;

use common::{fd_max_rel_error, fd_module_max_rel_error, point_mass_data, small_model, FD_REL_TOL};

type Check = Result<String, String>;
type Criterion<'a> = (&'a str, Box<dyn Fn() -> Check + 'a>);

fn verdict(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn matrix(g: &mut rng::Rng, r: usize, c: usize) -> Tensor {
    Tensor::new(vec![r, c], (0..r * c).map(|_| g.random_range(-1.0..1.0)).collect()).unwrap()
}

fn gradients() -> Check {
    let mut worst = [0.0f64; 4];
    let (_, ds) = point_mass_data(600, 3);
    for seed in 0..10u64 {
        let mut g = rng::rng(1000 + seed);
        let act = [Activation::Tanh, Activation::Elu, Activation::Relu][seed as usize % 3];
        let mlp = Mlp::new(&[3, 4, 4, 2], act, Activation::Identity, &mut g);
        let (x, t) = (matrix(&mut g, 5, 3), matrix(&mut g, 5, 2));
        worst[0] = worst[0].max(fd_module_max_rel_error(&mlp, |m, tape| {
            let b = m.bind(tape);
            let xv = tape.constant(x.clone());
            let y = b.forward(tape, &xv);
            let tv = tape.constant(t.clone());
            let d = tape.sub(&y, &tv);
            let sq = tape.square(&d);
            (tape.mean(&sq), b.vars())
        }));

        let gru = Gru::new(3, &[4, 3], &mut g);
        let xs: Vec<Tensor> = (0..4).map(|_| matrix(&mut g, 2, 3)).collect();
        worst[1] = worst[1].max(fd_module_max_rel_error(&gru, |m, tape| {
            let b = m.bind(tape);
            let mut h: Vec<_> = m.zero_state(2).into_iter().map(|t| tape.constant(t)).collect();
            for x in &xs {
                let xv = tape.constant(x.clone());
                h = b.step(tape, &h, &xv);
            }
            let top = *h.last().unwrap();
            let sq = tape.square(&top);
            (tape.sum(&sq), b.vars())
        }));

        let (mean, log_std, target) = (matrix(&mut g, 4, 3), matrix(&mut g, 4, 3), matrix(&mut g, 4, 3));
        worst[2] = worst[2].max(fd_max_rel_error(&[mean, log_std], |tape, v| {
            let tv = tape.constant(target.clone());
            let rows = gaussian_nll_rows(tape, &v[0], &v[1], &tv);
            tape.mean(&rows)
        }));

        let model = small_model(&ds, 3, 3, 40 + seed);
        let batch = sample_windows(&ds, 3, 3, 4, model.ensemble(), 0.7, &mut rng::rng(seed)).unwrap();
        worst[3] = worst[3].max(fd_module_max_rel_error(&model, |m, tape: &mut Tape| {
            let b = m.bind(tape);
            let loss = m.window_loss(tape, &b, &batch, 1.0, None).unwrap();
            (loss.total, b.vars())
        }));
    }
    let ok = worst.iter().all(|&w| w < FD_REL_TOL);
    verdict(ok, format!("max rel error mlp {:.1e} gru {:.1e} nll {:.1e} multi-step {:.1e} (tol {FD_REL_TOL:.0e})", worst[0], worst[1], worst[2], worst[3]))
}

fn brute_force_gae(r: &[f64], v: &[f64], done: &[bool], bootstrap: f64, gamma: f64, lam: f64) -> Vec<f64> {
    let n = r.len();
    let next_v = |t: usize| if done[t] { 0.0 } else if t + 1 < n { v[t + 1] } else { bootstrap };
    (0..n)
        .map(|t| {
            let mut total = 0.0;
            for k in t..n {
                total += (gamma * lam).powi((k - t) as i32) * (r[k] + gamma * next_v(k) - v[k]);
                if done[k] {
                    break;
                }
            }
            total
        })
        .collect()
}

fn advantages_and_penalty() -> Check {
    let mut g = rng::rng(7);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = g.random_range(1..=10);
        let r: Vec<f64> = (0..n).map(|_| g.random_range(-2.0..2.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| g.random_range(-5.0..5.0)).collect();
        let done: Vec<bool> = (0..n).map(|_| g.random_bool(0.2)).collect();
        let boot = g.random_range(-5.0..5.0);
        let (gamma, lam) = (g.random_range(0.5..1.0), g.random_range(0.0..1.0));
        let (adv, _) = gae(&r, &v, &done, boot, gamma, lam);
        let oracle = brute_force_gae(&r, &v, &done, boot, gamma, lam);
        worst = adv.iter().zip(&oracle).fold(worst, |w, (a, o)| w.max((a - o).abs()));
    }
    let (env, ds) = point_mass_data(2000, 9);
    let model = small_model(&ds, 4, 2, 10);
    let mut entries = 0;
    let mut violations = 0;
    for lambda in [0.0, 0.2, 1.0, 2.0] {
        let cfg = PpoConfig { lambda, agents: 32, steps: 16, net: NetConfig { hidden: vec![8], ..Default::default() }, ..PpoConfig::default() };
        let ac = init_actor_critic(&env, &cfg);
        let buf = imagine(&model, &ac, &ds, &env, &cfg, &mut rng::rng(11)).unwrap();
        for k in (0..buf.rewards.len()).filter(|&k| buf.active[k]) {
            entries += 1;
            if buf.penalized[k] != buf.rewards[k] - lambda * buf.uncertainty[k] {
                violations += 1;
            }
        }
    }
    verdict(
        worst <= 1e-10 && violations == 0 && entries > 0,
        format!("gae max abs error {worst:.1e} on 1000 trajectories; penalty identity broken on {violations}/{entries} entries"),
    )
}

fn uncertainty_properties() -> Check {
    let (_, ds) = point_mass_data(400, 5);
    let model = small_model(&ds, 3, 1, 6);
    let (od, ad) = (model.obs_dim(), model.act_dim());
    let mut g = rng::rng(13);
    let mut draw = |rows: usize, cols: usize| Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| 2.0 * rng::normal(&mut g)).collect()).unwrap();
    let obs: Vec<Tensor> = (0..3).map(|_| draw(10_000, od)).collect();
    let act: Vec<Tensor> = (0..3).map(|_| draw(10_000, ad)).collect();
    let step = |m: &rwmu_core::world_model::WorldModel| BatchRollout::start(m, &obs, &act[..2]).unwrap().step(&act[2]).unwrap();

    let base = step(&model);
    let non_negative = base.epistemic.data().iter().chain(base.aleatoric.data()).all(|&v| v >= 0.0);
    let mut copied = model.clone();
    let first = copied.heads[0].clone();
    copied.heads.iter_mut().for_each(|h| *h = first.clone());
    let zero = step(&copied).epistemic_scalar.iter().all(|&v| v == 0.0);
    let mut permuted = model.clone();
    permuted.heads = vec![model.heads[2].clone(), model.heads[0].clone(), model.heads[1].clone()];
    let p = step(&permuted);
    let invariant = p.obs == base.obs && p.epistemic == base.epistemic && p.aleatoric == base.aleatoric;
    verdict(
        non_negative && zero && invariant,
        format!("non-negative on 1e4 inputs {non_negative}, copied heads zero {zero}, permutation invariant {invariant}"),
    )
}

struct Scratch {
    dir: PathBuf,
    _guard: Option<tempfile::TempDir>,
}

impl Scratch {
    fn new() -> Self {
        let t = tempfile::tempdir().expect("tempdir");
        let dir = t.path().to_path_buf();
        let keep = std::env::var_os("RWMU_ACCEPT_KEEP").is_some();
        if keep {
            println!("# scratch directory {}", dir.display());
        }
        Self { dir, _guard: if keep { std::mem::forget(t); None } else { Some(t) } }
    }

    /// Runs one command; returns its wall time.
    fn rwmu(&self, out: &str, cmd: &[&str], sets: &[&str]) -> Result<Duration, String> {
        let mut argv: Vec<String> = vec!["rwmu".into()];
        argv.extend(cmd.iter().map(|s| s.to_string()));
        argv.extend(["--out".into(), self.dir.join(out).display().to_string()]);
        for s in sets {
            argv.extend(["--set".into(), s.to_string()]);
        }
        let start = Instant::now();
        let code = run(&argv);
        if code != EXIT_OK {
            return Err(format!("`{}` exited with {code}", argv[1..].join(" ")));
        }
        Ok(start.elapsed())
    }

    fn report(&self, out: &str, kind: &str) -> Result<StudyReport, String> {
        let p = self.dir.join(out).join("reports").join(format!("{kind}.json"));
        let text = std::fs::read_to_string(&p).map_err(|e| format!("{}: {e}", p.display()))?;
        serde_json::from_str(&text).map_err(|e| e.to_string())
    }
}

fn minutes(d: Duration) -> f64 {
    d.as_secs_f64() / 60.0
}

fn calibration(s: &Scratch) -> Check {
    let sets = ["study.calibration_depths=[8,16,32]"];
    let mut t = Duration::ZERO;
    for cmd in [&["collect"][..], &["train-wm"], &["calibrate"]] {
        t += s.rwmu("main", cmd, &sets)?;
    }
    let text = std::fs::read_to_string(s.dir.join("main/reports/calibration.csv")).map_err(|e| e.to_string())?;
    let mut rows = Vec::new();
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let num = |i: usize| f[i].parse::<f64>().unwrap_or(f64::NAN);
        rows.push((f[0].parse::<usize>().unwrap(), num(2), num(5)));
    }
    let deep_ok = rows.iter().filter(|r| r.0 >= 16).all(|r| r.2 >= 0.5);
    let monotone = rows.windows(2).all(|w| w[1].1 > w[0].1);
    let listing: Vec<String> = rows.iter().map(|(d, e, rho)| format!("d{d}: rho {rho:.3} epi {e:.2e}")).collect();
    verdict(
        deep_ok && monotone && t < Duration::from_secs(15 * 60),
        format!("{}; monotone {monotone}; {:.1} min (need rho >= 0.5 at depth >= 16, < 15 min)", listing.join(", "), minutes(t)),
    )
}

fn mean_by(r: &StudyReport, pick: impl Fn(&Axis) -> bool, f: impl Fn(&rwmu_core::eval::StudyCell) -> f64) -> f64 {
    r.mean_of(pick, f).unwrap_or(f64::NAN)
}

fn lambda_sweep(s: &Scratch) -> Check {
    let t = s.rwmu("main", &["study", "lambda"], &["study.lambdas=[0.2,1,2]"])?;
    let r = s.report("main", "lambda")?;
    let at = |l: f64| move |a: &Axis| matches!(a, Axis::Lambda { lambda } if *lambda == l);
    let norm = |l| mean_by(&r, at(l), |c| c.normalized());
    let (n02, n1, n2) = (norm(0.2), norm(1.0), norm(2.0));
    let imag02 = mean_by(&r, at(0.2), |c| c.imagination_return);
    let true02 = mean_by(&r, at(0.2), |c| c.eval.mean_return);
    let u = |l| mean_by(&r, at(l), |c| c.mean_uncertainty);
    let (u02, u1, u2) = (u(0.2), u(1.0), u(2.0));
    let best = n1 >= n02 + 0.05 && n1 >= n2 + 0.05;
    let optimistic = imag02 > true02;
    let calm = u2 < u1 && u2 < u02;
    verdict(
        best && optimistic && calm && t < Duration::from_secs(3600),
        format!(
            "normalized 0.2 {n02:.3} / 1 {n1:.3} / 2 {n2:.3}; lambda 0.2 imagination {imag02:.1} vs true {true02:.1}; \
             mean u {u02:.2e} / {u1:.2e} / {u2:.2e}; {:.1} min",
            minutes(t)
        ),
    )
}

fn regimes(s: &Scratch) -> Check {
    s.rwmu("main", &["study", "regimes"], &["study.regimes=[\"random\",\"expert\",\"mixed\"]", "study.variants=[1.0,0.0]"])?;
    let r = s.report("main", "regimes")?;
    let at = |g: Regime, l: f64| move |a: &Axis| matches!(a, Axis::Regime { regime, lambda } if *regime == g && *lambda == l);
    let n = |g, l| mean_by(&r, at(g, l), |c| c.normalized());
    let (random, expert, mixed, mixed0) = (n(Regime::Random, 1.0), n(Regime::Expert, 1.0), n(Regime::Mixed, 1.0), n(Regime::Mixed, 0.0));
    let ok = mixed >= expert - 0.05 && mixed >= random + 0.2 && expert >= random + 0.2 && mixed0 <= mixed - 0.05;
    verdict(ok, format!("normalized random {random:.3}, expert {expert:.3}, mixed {mixed:.3}, mixed unaware {mixed0:.3}"))
}

fn mixture(s: &Scratch) -> Check {
    s.rwmu("main", &["study", "mixture"], &["study.mixture=[[200000,0],[160000,40000],[80000,120000]]"])?;
    let r = s.report("main", "mixture")?;
    let at = |real: usize| move |a: &Axis| matches!(a, Axis::Mixture { real_count, .. } if *real_count == real);
    let n = |real| mean_by(&r, at(real), |c| c.normalized());
    let (pure, mostly, heavy) = (n(0), n(40_000), n(120_000));
    verdict(
        mostly >= pure + 0.03 && heavy < mostly,
        format!("normalized on shifted dynamics 100/0 {pure:.3}, 80/20 {mostly:.3}, 40/60 {heavy:.3}"),
    )
}

fn offline_only() -> Check {
    let (env, ds) = point_mass_data(2000, 21);
    let model = small_model(&ds, 4, 2, 22);
    let cfg = PpoConfig { agents: 16, steps: 8, iterations: 4, net: NetConfig { hidden: vec![8], ..Default::default() }, ..PpoConfig::default() };
    let before = true_steps_on_this_thread();
    train_policy(&model, &ds, &env, &cfg).map_err(|e| e.to_string())?;
    let during = true_steps_on_this_thread() - before;
    point_mass_data(200, 23);
    let control = true_steps_on_this_thread() - before - during;
    verdict(during == 0 && control >= 200, format!("{during} true steps during policy training; control collection counted {control}"))
}

fn csv_files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .map(|d| d.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.extension().is_some_and(|x| x == "csv")).collect())
        .unwrap_or_default();
    v.sort();
    v
}

fn reproducible(s: &Scratch) -> Check {
    let t = s.rwmu("first", &["pipeline"], &[])?;
    let manifest = s.dir.join("first/manifests/pipeline.json");
    s.rwmu("second", &["replay", manifest.to_str().unwrap()], &[])?;
    let (a, b) = (csv_files(&s.dir.join("first/reports")), csv_files(&s.dir.join("second/reports")));
    let names = |v: &[PathBuf]| v.iter().map(|p| p.file_name().unwrap().to_owned()).collect::<Vec<_>>();
    let same_set = !a.is_empty() && names(&a) == names(&b);
    let differing: Vec<String> = a
        .iter()
        .zip(&b)
        .filter(|(x, y)| std::fs::read(x).ok() != std::fs::read(y).ok())
        .map(|(x, _)| x.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    verdict(
        same_set && differing.is_empty() && t < Duration::from_secs(30 * 60),
        format!("{} CSVs compared, differing {:?}; pipeline {:.1} min", a.len(), differing, minutes(t)),
    )
}

fn main() {
    let scratch = Scratch::new();
    let criteria: Vec<Criterion> = vec![
        ("gradients match finite differences", Box::new(gradients)),
        ("advantages and penalized rewards", Box::new(advantages_and_penalty)),
        ("ensemble uncertainty properties", Box::new(uncertainty_properties)),
        ("uncertainty tracks rollout error", Box::new(|| calibration(&scratch))),
        ("penalty weight sweep", Box::new(|| lambda_sweep(&scratch))),
        ("dataset regimes", Box::new(|| regimes(&scratch))),
        ("sim/real mixture under shift", Box::new(|| mixture(&scratch))),
        ("policy learning is offline", Box::new(offline_only)),
        ("pipeline replay is byte-identical", Box::new(|| reproducible(&scratch))),
    ];
    let only: Option<Vec<usize>> = std::env::var("RWMU_ACCEPT_ONLY").ok().map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let (mut failed, mut ran) = (0, 0);
    for (i, (name, check)) in criteria.iter().enumerate() {
        if only.as_ref().is_some_and(|o| !o.contains(&(i + 1))) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} {}. {name}: {detail} [{:.0}s]", i + 1, start.elapsed().as_secs_f64());
    }
    println!("{} of {ran} criteria passed", ran - failed);
    if failed > 0 && std::env::var_os("RWMU_ACCEPT_STRICT").is_some() {
        std::process::exit(1);
    }
}
