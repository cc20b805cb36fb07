#![allow(dead_code)]

use rwmu_core::nn::{Backend, Tape, Tensor, Var};

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;
/// Denominator floor so gradients that are numerically zero compare by
/// absolute error instead of blowing up the ratio.
pub const FD_FLOOR: f64 = 1e-5;

/// Worst relative error between tape gradients and central differences of
/// the same forward function, over every entry of every parameter.
pub fn fd_max_rel_error(params: &[Tensor], build: impl Fn(&mut Tape, &[Var]) -> Var) -> f64 {
    let eval = |ps: &[Tensor]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p)).collect();
        let loss = build(&mut tape, &vars);
        tape.value(&loss).item()
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p)).collect();
    let loss = build(&mut tape, &vars);
    let grads = tape.backward(loss).expect("scalar loss");
    let mut worst = 0.0f64;
    let mut work = params.to_vec();
    for (pi, v) in vars.iter().enumerate() {
        let g = grads.get_or_zeros(*v);
        for k in 0..params[pi].len() {
            let orig = params[pi].data()[k];
            work[pi].data_mut()[k] = orig + FD_STEP;
            let up = eval(&work);
            work[pi].data_mut()[k] = orig - FD_STEP;
            let down = eval(&work);
            work[pi].data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let analytic = g.data()[k];
            let denom = analytic.abs().max(numeric.abs()).max(FD_FLOOR);
            worst = worst.max((analytic - numeric).abs() / denom);
        }
    }
    worst
}

/// Same check for a [`rwmu_core::nn::Module`]: `build` binds the module on
/// the tape and returns the loss plus the bound variables in `params()` order.
pub fn fd_module_max_rel_error<M: rwmu_core::nn::Module + Clone>(
    module: &M,
    build: impl Fn(&M, &mut Tape) -> (Var, Vec<Var>),
) -> f64 {
    let eval = |m: &M| {
        let mut tape = Tape::new();
        let (loss, _) = build(m, &mut tape);
        tape.value(&loss).item()
    };
    let mut tape = Tape::new();
    let (loss, vars) = build(module, &mut tape);
    let grads = tape.backward(loss).expect("scalar loss");
    let analytic: Vec<Tensor> = vars.iter().map(|v| grads.get_or_zeros(*v)).collect();
    let mut work = module.clone();
    let mut worst = 0.0f64;
    let sizes: Vec<usize> = module.params().iter().map(|t| t.len()).collect();
    for (pi, &n) in sizes.iter().enumerate() {
        for k in 0..n {
            let orig = work.params()[pi].data()[k];
            work.params_mut()[pi].data_mut()[k] = orig + FD_STEP;
            let up = eval(&work);
            work.params_mut()[pi].data_mut()[k] = orig - FD_STEP;
            let down = eval(&work);
            work.params_mut()[pi].data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic[pi].data()[k];
            let denom = a.abs().max(numeric.abs()).max(FD_FLOOR);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    worst
}

use rwmu_core::datasets::{collect, OfflineDataset};
use rwmu_core::envs::EnvConfig;
use rwmu_core::mopo::{NetConfig, PolicyNet};
use rwmu_core::nn::Activation;
use rwmu_core::world_model::{WorldModel, WorldModelConfig};

/// Point-mass data from an untrained policy with exploration noise.
pub fn point_mass_data(transitions: usize, seed: u64) -> (EnvConfig, OfflineDataset) {
    let env = EnvConfig::point_mass();
    let policy = PolicyNet::for_env(&env, NetConfig::default(), seed);
    let ds = collect(&env, &policy, transitions, 0.3, seed + 1, "test").expect("collect");
    (env, ds)
}

/// A world model small enough for finite differences. Smooth head
/// activations keep central differences away from kinks.
pub fn small_model(ds: &OfflineDataset, history: usize, horizon: usize, seed: u64) -> WorldModel {
    let cfg = WorldModelConfig {
        history,
        horizon,
        ensemble: 3,
        gru_hidden: vec![4],
        head_hidden: vec![4],
        head_activation: Activation::Tanh,
        ..WorldModelConfig::default()
    };
    WorldModel::for_dataset(cfg, ds, seed).expect("model")
}
