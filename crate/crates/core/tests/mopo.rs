mod common;

use rand::Rng as _;
use rwmu_core::envs::true_steps_on_this_thread;
use rwmu_core::mopo::{gae, imagine, init_actor_critic, normalize_advantages, penalize, ppo_update, train_policy, PpoConfig};
use rwmu_core::nn::Module;
use rwmu_core::rng;
use rwmu_core::world_model::{train, TrainConfig};

/// Advantage as the explicit sum over future TD residuals, cut at the
/// first terminal step.
fn brute_force(r: &[f64], v: &[f64], done: &[bool], bootstrap: f64, gamma: f64, lam: f64) -> Vec<f64> {
    let n = r.len();
    let next_v = |t: usize| if done[t] { 0.0 } else if t + 1 < n { v[t + 1] } else { bootstrap };
    (0..n)
        .map(|t| {
            let mut total = 0.0;
            for l in 0..n - t {
                let k = t + l;
                let delta = r[k] + gamma * next_v(k) - v[k];
                total += (gamma * lam).powi(l as i32) * delta;
                if done[k] {
                    break;
                }
            }
            total
        })
        .collect()
}

#[test]
fn gae_matches_the_explicit_sum() {
    let mut g = rng::rng(1);
    for case in 0..1000 {
        let n = g.random_range(1..=10);
        let r: Vec<f64> = (0..n).map(|_| g.random_range(-2.0..2.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| g.random_range(-5.0..5.0)).collect();
        let done: Vec<bool> = (0..n).map(|_| g.random_bool(0.2)).collect();
        let bootstrap = g.random_range(-5.0..5.0);
        let (gamma, lam) = (g.random_range(0.5..1.0), g.random_range(0.0..1.0));
        let (adv, ret) = gae(&r, &v, &done, bootstrap, gamma, lam);
        let oracle = brute_force(&r, &v, &done, bootstrap, gamma, lam);
        for t in 0..n {
            assert!((adv[t] - oracle[t]).abs() < 1e-10, "case {case} step {t}: {} vs {}", adv[t], oracle[t]);
            assert!((ret[t] - (oracle[t] + v[t])).abs() < 1e-10);
        }
    }
}

#[test]
fn normalized_advantages_have_zero_mean_unit_std() {
    let mut g = rng::rng(2);
    let a: Vec<f64> = (0..257).map(|_| g.random_range(-3.0..7.0)).collect();
    let z = normalize_advantages(&a);
    let mean = z.iter().sum::<f64>() / z.len() as f64;
    let var = z.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / z.len() as f64;
    assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-10);
}

#[test]
fn imagined_buffer_entries_satisfy_the_penalty_identity() {
    let (env, ds) = common::point_mass_data(2_000, 3);
    let mut model = common::small_model(&ds, 4, 2, 4);
    train(&mut model, &ds, &TrainConfig { steps: 5, batch: 8, lr: 1e-3, ..TrainConfig::default() }).unwrap();
    for lambda in [0.0, 0.2, 1.0, 2.0] {
        let cfg = PpoConfig { lambda, agents: 16, steps: 12, net: rwmu_core::mopo::NetConfig { hidden: vec![8], ..Default::default() }, ..PpoConfig::default() };
        let ac = init_actor_critic(&env, &cfg);
        let buf = imagine(&model, &ac, &ds, &env, &cfg, &mut rng::rng(5)).unwrap();
        let mut checked = 0;
        for k in 0..buf.rewards.len() {
            if !buf.active[k] {
                continue;
            }
            assert!(buf.uncertainty[k] >= 0.0);
            assert_eq!(buf.penalized[k], buf.rewards[k] - lambda * buf.uncertainty[k]);
            assert_eq!(buf.penalized[k], penalize(buf.rewards[k], buf.uncertainty[k], lambda).unwrap());
            checked += 1;
        }
        assert!(checked > 0);
    }
}

#[test]
fn policy_training_never_steps_the_true_environment() {
    let (env, ds) = common::point_mass_data(1_500, 6);
    let model = common::small_model(&ds, 4, 2, 7);
    let cfg = PpoConfig { agents: 8, steps: 6, iterations: 3, net: rwmu_core::mopo::NetConfig { hidden: vec![8], ..Default::default() }, ..PpoConfig::default() };
    let before = true_steps_on_this_thread();
    let run = train_policy(&model, &ds, &env, &cfg).unwrap();
    assert_eq!(true_steps_on_this_thread(), before, "train_policy touched the true dynamics");
    assert_eq!(run.curves.len(), 3);
    // the counter itself works: collection does step the environment
    common::point_mass_data(200, 8);
    assert!(true_steps_on_this_thread() >= before + 200);
}

#[test]
fn one_update_moves_every_network_and_stays_finite() {
    let (env, ds) = common::point_mass_data(1_500, 9);
    let model = common::small_model(&ds, 4, 2, 10);
    let cfg = PpoConfig { agents: 16, steps: 8, net: rwmu_core::mopo::NetConfig { hidden: vec![8], ..Default::default() }, ..PpoConfig::default() };
    let mut ac = init_actor_critic(&env, &cfg);
    let mut buf = imagine(&model, &ac, &ds, &env, &cfg, &mut rng::rng(11)).unwrap();
    buf.finalize(cfg.gamma, cfg.gae_lambda);
    let (p0, v0) = (ac.policy.clone(), ac.value.clone());
    let stats = ppo_update(&mut ac, &buf, &cfg, &mut rng::rng(12)).unwrap();
    assert!(stats.kl.is_finite() && stats.policy_loss.is_finite() && stats.value_loss.is_finite());
    let moved = |a: Vec<&rwmu_core::nn::Tensor>, b: Vec<&rwmu_core::nn::Tensor>| a.iter().zip(&b).all(|(x, y)| x != y);
    assert!(moved(p0.mlp.params(), ac.policy.mlp.params()), "a policy tensor received no update");
    assert!(moved(v0.mlp.params(), ac.value.mlp.params()), "a value tensor received no update");
    assert!(ac.policy.mlp.params().iter().chain(ac.value.mlp.params().iter()).all(|t| t.is_finite()));
}
