use rwmu_core::envs::{self, reset, step, Env, EnvConfig, EnvState, StepNoise};
use rwmu_core::rng;

fn noiseless(mut cfg: EnvConfig) -> EnvConfig {
    cfg.obs_noise_std.clear();
    cfg
}

#[test]
fn pendulum_energy_drift_is_bounded() {
    let mut cfg = noiseless(EnvConfig::pendulum());
    cfg.damping = 0.0;
    cfg.angle_limit = 1e6;
    cfg.episode_length = 1000;
    let mut s = EnvState {
        position: vec![std::f64::consts::PI - 0.5],
        velocity: vec![0.0],
        command: vec![0.0],
        prev_action: vec![0.0],
        step: 0,
    };
    // height measured from the bottom of the swing
    let energy = |s: &EnvState| {
        0.5 * cfg.mass * cfg.length.powi(2) * s.velocity[0].powi(2)
            + cfg.mass * cfg.gravity * cfg.length * (1.0 + s.position[0].cos())
    };
    let z = StepNoise::zeros(cfg.kind);
    let mut trace = vec![energy(&s)];
    for _ in 0..500 {
        s = step(&s, &[0.0], &cfg, &z).unwrap().state;
        trace.push(energy(&s));
    }
    // The symplectic integrator's pointwise energy oscillates by O(dt) within
    // a swing; drift is the secular change, so compare window means spanning
    // more than one period (~2 s = 100 steps).
    let mean = |w: &[f64]| w.iter().sum::<f64>() / w.len() as f64;
    let (first, last) = (mean(&trace[..150]), mean(&trace[trace.len() - 150..]));
    let drift = (last - first).abs() / first;
    assert!(drift < 0.02, "energy drift {drift}");
    let swing = trace.iter().map(|e| (e - trace[0]).abs() / trace[0]).fold(0.0, f64::max);
    assert!(swing < 0.05, "pointwise energy error {swing}");
}

#[test]
fn rollout_matches_standalone_integrator() {
    let cfg = noiseless(EnvConfig::point_mass());
    let (mut s, _) = reset(&cfg, 42).unwrap();
    let (mut p, mut v) = (s.position.clone(), s.velocity.clone());
    let z = StepNoise::zeros(cfg.kind);
    for k in 0..50 {
        let a = [((k as f64) * 0.3).sin(), ((k as f64) * 0.17).cos() * 0.8];
        s = step(&s, &a, &cfg, &z).unwrap().state;
        for i in 0..2 {
            let beyond = (p[i].abs() - cfg.edge_start).max(0.0);
            let f = a[i] * cfg.max_force - cfg.damping * v[i] + cfg.edge_pull * beyond * beyond * p[i].signum();
            v[i] += cfg.dt * f / cfg.mass;
            p[i] += cfg.dt * v[i];
        }
    }
    for i in 0..2 {
        assert!((s.position[i] - p[i]).abs() < 1e-12);
        assert!((s.velocity[i] - v[i]).abs() < 1e-12);
    }
}

#[test]
fn edge_slope_pushes_outward_only_beyond_its_start() {
    let cfg = noiseless(EnvConfig::point_mass());
    let z = StepNoise::zeros(cfg.kind);
    let at = |x: f64| EnvState { position: vec![x, 0.0], velocity: vec![0.0, 0.0], command: vec![0.0, 0.0], prev_action: vec![0.0, 0.0], step: 0 };
    let dv = |x: f64| step(&at(x), &[0.0, 0.0], &cfg, &z).unwrap().state.velocity[0];
    assert_eq!(dv(0.5 * cfg.edge_start), 0.0);
    let x = 0.5 * (cfg.edge_start + cfg.arena_half_width);
    let expected = cfg.dt * cfg.edge_pull * (x - cfg.edge_start).powi(2) / cfg.mass;
    assert!((dv(x) - expected).abs() < 1e-12);
    assert!((dv(-x) + expected).abs() < 1e-12);
}

#[test]
fn replaying_noise_reproduces_trajectory() {
    let mut cfg = EnvConfig::point_mass();
    // keep the drifting test action inside the arena
    cfg.edge_pull = 0.0;
    cfg.arena_half_width = 10.0;
    let (s0, _) = reset(&cfg, 7).unwrap();
    let mut r = rng::rng(99);
    let draws: Vec<StepNoise> = (0..150).map(|_| StepNoise::draw(cfg.kind, &mut r)).collect();
    let run = || {
        let mut s = s0.clone();
        let mut obs = Vec::new();
        for (k, n) in draws.iter().enumerate() {
            let out = step(&s, &[0.3 * (k as f64).sin(), -0.2], &cfg, n).unwrap();
            obs.push(out.obs);
            s = out.state;
        }
        obs
    };
    assert_eq!(run(), run());
}

#[test]
fn reward_total_is_weighted_sum_over_a_rollout() {
    let cfg = EnvConfig::point_mass();
    let (mut env, _) = Env::new(cfg.clone(), 3).unwrap();
    for k in 0..200 {
        let out = env.step(&[(k as f64 * 0.05).sin(), 0.7]).unwrap();
        let sum: f64 = out.reward.terms().iter().map(|(_, v)| v).sum();
        assert!((out.reward.total - sum).abs() <= 1e-12);
        assert!(!out.failure || out.done);
        if out.done {
            break;
        }
    }
}

#[test]
fn step_counter_tracks_true_steps() {
    let before = envs::true_steps_on_this_thread();
    let (mut env, _) = Env::new(EnvConfig::pendulum(), 0).unwrap();
    env.step(&[0.1]).unwrap();
    env.step(&[0.1]).unwrap();
    assert_eq!(envs::true_steps_on_this_thread() - before, 2);
}
