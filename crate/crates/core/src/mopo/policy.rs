//! Gaussian policy and value networks.

use serde::{Deserialize, Serialize};

use crate::envs::{Controller, EnvConfig, EnvKind};
use crate::error::{dim_err, Error, Result};
use crate::nn::{Activation, Backend, Checkpoint, Mlp, Module, Tensor, HALF_LN_2PI};
use crate::rng::{self, Rng};

pub const POLICY_LOG_STD_MIN: f64 = -5.0;
pub const POLICY_LOG_STD_MAX: f64 = 1.0;

/// Fixed affine input scaling `(o - offset) / scale` derived from the
/// environment's physical ranges, so policies trained online and offline
/// see identical inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsScale {
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

impl ObsScale {
    pub fn identity(dim: usize) -> Self {
        Self { offset: vec![0.0; dim], scale: vec![1.0; dim] }
    }

    pub fn for_env(cfg: &EnvConfig) -> Self {
        let pos = |v: f64| if v > 0.0 { v } else { 1.0 };
        let scale = match cfg.kind {
            EnvKind::PointMass => {
                let v = pos(cfg.command_bound).max(0.5);
                vec![v, v, pos(cfg.command_bound), pos(cfg.command_bound), cfg.arena_half_width / 2.0, cfg.arena_half_width / 2.0, 0.5, 0.5]
            }
            EnvKind::Pendulum => vec![1.0, pos(cfg.command_bound), cfg.angle_limit / 2.0, 0.5],
        };
        Self { offset: vec![0.0; scale.len()], scale }
    }

    pub fn dim(&self) -> usize {
        self.scale.len()
    }

    pub fn apply(&self, obs: &Tensor) -> Tensor {
        let c = obs.cols();
        let mut out = obs.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let j = i % c;
            *v = (*v - self.offset[j]) / self.scale[j];
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Initial action noise std of the policy.
    pub init_std: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self { hidden: vec![32, 32, 32], activation: Activation::Elu, init_std: 1.0 }
    }
}

fn dims(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    std::iter::once(input).chain(hidden.iter().copied()).chain(std::iter::once(output)).collect()
}

/// Diagonal Gaussian policy with a state-independent log-std.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    pub mlp: Mlp,
    /// `[1, act_dim]`
    pub log_std: Tensor,
    pub scale: ObsScale,
    pub config: NetConfig,
}

impl PolicyNet {
    pub fn new(act_dim: usize, scale: ObsScale, config: NetConfig, rng: &mut Rng) -> Self {
        let mlp = Mlp::new(&dims(scale.dim(), &config.hidden, act_dim), config.activation, Activation::Identity, rng);
        let log_std = Tensor::full(&[1, act_dim], config.init_std.ln().clamp(POLICY_LOG_STD_MIN, POLICY_LOG_STD_MAX));
        Self { mlp, log_std, scale, config }
    }

    pub fn for_env(cfg: &EnvConfig, config: NetConfig, seed: u64) -> Self {
        Self::new(cfg.act_dim(), ObsScale::for_env(cfg), config, &mut rng::rng(rng::child(seed, "policy-init")))
    }

    pub fn std(&self) -> Vec<f64> {
        self.log_std.data().iter().map(|s| s.exp()).collect()
    }

    /// Action means for a `[batch, obs]` matrix.
    pub fn mean(&self, obs: &Tensor) -> Result<Tensor> {
        if obs.cols() != self.scale.dim() {
            return Err(dim_err!("policy expects {} obs dims, got {}", self.scale.dim(), obs.cols()));
        }
        self.mlp.forward(&self.scale.apply(obs))
    }

    /// Sampled actions and their log-probabilities.
    pub fn sample(&self, obs: &Tensor, rng: &mut Rng) -> Result<(Tensor, Vec<f64>)> {
        let mean = self.mean(obs)?;
        let std = self.std();
        let mut act = mean.clone();
        let c = act.cols();
        for (i, a) in act.data_mut().iter_mut().enumerate() {
            *a += std[i % c] * rng::normal(rng);
        }
        let logp = self.log_prob(&mean, &act);
        Ok((act, logp))
    }

    /// Row-wise log-density of `act` under means `mean`.
    pub fn log_prob(&self, mean: &Tensor, act: &Tensor) -> Vec<f64> {
        let ls = self.log_std.data();
        let c = act.cols();
        (0..act.rows())
            .map(|r| {
                (0..c)
                    .map(|j| {
                        let z = (act.row_slice(r)[j] - mean.row_slice(r)[j]) * (-ls[j]).exp();
                        -0.5 * z * z - ls[j] - HALF_LN_2PI
                    })
                    .sum()
            })
            .collect()
    }

    pub fn entropy(&self) -> f64 {
        self.log_std.data().iter().map(|s| s + 0.5 + HALF_LN_2PI).sum()
    }

    pub fn clamp_log_std(&mut self) {
        for s in self.log_std.data_mut() {
            *s = s.clamp(POLICY_LOG_STD_MIN, POLICY_LOG_STD_MAX);
        }
    }

    /// Row-wise log-probabilities on a backend: returns (log_prob `[b,1]`,
    /// entropy `[1]`, action means `[b, act]`).
    pub(crate) fn log_prob_on<B: Backend>(
        b: &mut B,
        mlp: &crate::nn::layers::BoundMlp<B::V>,
        log_std: &B::V,
        obs_scaled: &B::V,
        act: &B::V,
    ) -> (B::V, B::V, B::V) {
        let mean = mlp.forward(b, obs_scaled);
        let diff = b.sub(act, &mean);
        let neg = b.scale(log_std, -1.0);
        let inv = b.exp(&neg);
        let z = b.mul_row(&diff, &inv);
        let z2 = b.square(&z);
        let quad = b.sum_cols(&z2);
        let quad = b.scale(&quad, -0.5);
        let ls_sum = b.sum(log_std);
        let d = b.value(log_std).len() as f64;
        let neg_ls = b.scale(&ls_sum, -1.0);
        let logp = b.add_row(&quad, &neg_ls);
        let logp = b.add_scalar(&logp, -d * HALF_LN_2PI);
        let ent = b.add_scalar(&ls_sum, d * (0.5 + HALF_LN_2PI));
        (logp, ent, mean)
    }

    pub fn to_checkpoint(&self, seed: u64, extra: serde_json::Value) -> Checkpoint {
        let (mut kinds, mut named) = self.mlp.export("policy");
        kinds.push(format!("log_std:{}", self.log_std.len()));
        named.push(("policy.log_std".into(), self.log_std.clone()));
        let extra = serde_json::json!({ "net": self.config, "scale": self.scale, "ppo": extra });
        Checkpoint::new("policy", seed, kinds, named, extra)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind("policy")?;
        let config: NetConfig = serde_json::from_value(ckpt.meta.extra["net"].clone())
            .map_err(|e| Error::Format(format!("policy net config: {e}")))?;
        let scale: ObsScale = serde_json::from_value(ckpt.meta.extra["scale"].clone())
            .map_err(|e| Error::Format(format!("policy obs scale: {e}")))?;
        let act_dim = ckpt.tensors.last().map(Tensor::len).ok_or_else(|| Error::Format("empty policy checkpoint".into()))?;
        let mut r = ckpt.reader();
        let d = dims(scale.dim(), &config.hidden, act_dim);
        let mut acts = vec![config.activation; d.len() - 1];
        *acts.last_mut().unwrap() = Activation::Identity;
        let mlp = Mlp::import(&mut r, &d, acts)?;
        let log_std = r.take(&[1, act_dim])?;
        r.finish()?;
        Ok(Self { mlp, log_std, scale, config })
    }
}

impl Module for PolicyNet {
    fn params(&self) -> Vec<&Tensor> {
        let mut p = self.mlp.params();
        p.push(&self.log_std);
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.mlp.params_mut();
        p.push(&mut self.log_std);
        p
    }
}

impl Controller for PolicyNet {
    fn obs_dim(&self) -> usize {
        self.scale.dim()
    }

    fn act_dim(&self) -> usize {
        self.log_std.len()
    }

    /// Deterministic mode: the mean action.
    fn act(&self, obs: &[f64]) -> Vec<f64> {
        let t = Tensor::from_raw(vec![1, obs.len()], obs.to_vec());
        self.mean(&t).expect("observation width checked by caller").into_data()
    }
}

/// State-value network.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueNet {
    pub mlp: Mlp,
    pub scale: ObsScale,
}

impl ValueNet {
    pub fn new(scale: ObsScale, config: &NetConfig, rng: &mut Rng) -> Self {
        let mlp = Mlp::new(&dims(scale.dim(), &config.hidden, 1), config.activation, Activation::Identity, rng);
        Self { mlp, scale }
    }

    pub fn values(&self, obs: &Tensor) -> Result<Vec<f64>> {
        Ok(self.mlp.forward(&self.scale.apply(obs))?.into_data())
    }
}

impl Module for ValueNet {
    fn params(&self) -> Vec<&Tensor> {
        self.mlp.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.mlp.params_mut()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Eager, Tape};

    fn policy() -> PolicyNet {
        PolicyNet::for_env(&EnvConfig::point_mass(), NetConfig { init_std: 0.5, ..NetConfig::default() }, 3)
    }

    #[test]
    fn backend_log_prob_matches_closed_form() {
        let p = policy();
        let mut r = rng::rng(1);
        let obs = Tensor::new(vec![3, 8], (0..24).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let (act, logp) = p.sample(&obs, &mut r).unwrap();
        let mut e = Eager;
        let bound = p.mlp.bind(&mut e);
        let ls = p.log_std.clone();
        let (lp, ent, _) = PolicyNet::log_prob_on(&mut e, &bound, &ls, &p.scale.apply(&obs), &act);
        for (a, b) in lp.data().iter().zip(&logp) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((ent.item() - p.entropy()).abs() < 1e-12);
        // tape records the same values
        let mut t = Tape::new();
        let bound = p.mlp.bind(&mut t);
        let ls = t.param(&p.log_std);
        let x = t.constant(p.scale.apply(&obs));
        let a = t.constant(act);
        let (lp2, _, _) = PolicyNet::log_prob_on(&mut t, &bound, &ls, &x, &a);
        assert_eq!(t.value(&lp2), &lp);
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = policy();
        let back = PolicyNet::from_checkpoint(&Checkpoint::from_bytes(&p.to_checkpoint(3, serde_json::Value::Null).to_bytes()).unwrap()).unwrap();
        assert_eq!(back, p);
    }
}
