//! Ensemble recurrent world model with epistemic uncertainty.
//!
//! A stacked GRU reads normalized `(observation, action)` pairs. On top of
//! its features sit `B` independently initialized Gaussian heads, each
//! predicting the mean and log-std of the normalized next observation.
//! The ensemble mean is the prediction; the spread of head means is the
//! epistemic uncertainty and the average predicted variance the aleatoric
//! one. An optional extra head predicts the failure flag.

mod calibrate;
mod predict;
mod train;

use serde::{Deserialize, Serialize};

use crate::datasets::OfflineDataset;
use crate::envs::EnvKind;
use crate::error::{Error, Result};
use crate::nn::{Activation, Checkpoint, Gru, Mlp, Module, Tensor};
use crate::rng;

pub use calibrate::{calibration_report, CalibrationReport, CalibrationRow};
pub use predict::{ActionSource, BatchPrediction, BatchRollout, ImaginedStep, Rollout, Truncation, UncertaintyEstimate};
pub use train::{train, BoundModel, LossParts, TrainConfig, TrainReport};

/// Training objective for the mean/variance heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Gaussian negative log-likelihood.
    Nll,
    /// Squared error on the mean only (ablation).
    Mse,
}

/// What is fed back as the next input during multi-step training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Feedback {
    EnsembleMean,
    /// A draw from the Gaussian of one uniformly chosen head.
    Sample,
}

/// Reduction of per-dimension epistemic variance to a scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    Mean,
    Max,
}

/// Whether aleatoric uncertainty is reported as variance or std.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AleatoricSpace {
    Variance,
    Std,
}

/// How rollouts condition on history beyond the first prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HistoryMode {
    /// Keep the recurrent state and feed one new frame per step.
    Carry,
    /// Re-run the base over exactly the last `M` frames every step.
    Window,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldModelConfig {
    /// History frames `M`.
    pub history: usize,
    /// Forecast steps `N`.
    pub horizon: usize,
    /// Ensemble heads `B`.
    pub ensemble: usize,
    /// Forecast decay `α`.
    pub decay: f64,
    pub gru_hidden: Vec<usize>,
    pub head_hidden: Vec<usize>,
    pub head_activation: Activation,
    /// Heads predict the change from the current normalized observation.
    pub residual: bool,
    pub failure_head: bool,
    pub loss: LossKind,
    pub feedback: Feedback,
    pub reduction: Reduction,
    pub aleatoric: AleatoricSpace,
    pub history_mode: HistoryMode,
    /// Rollouts stop when a prediction leaves the data range by this many
    /// ranges.
    pub divergence_factor: f64,
    /// Rollouts stop when the predicted failure probability exceeds this.
    pub failure_threshold: f64,
}

impl Default for WorldModelConfig {
    fn default() -> Self {
        Self {
            history: 32,
            horizon: 8,
            ensemble: 5,
            decay: 1.0,
            gru_hidden: vec![64, 64],
            head_hidden: vec![32],
            head_activation: Activation::Relu,
            residual: true,
            failure_head: true,
            loss: LossKind::Nll,
            feedback: Feedback::EnsembleMean,
            reduction: Reduction::Mean,
            aleatoric: AleatoricSpace::Variance,
            history_mode: HistoryMode::Carry,
            divergence_factor: 10.0,
            failure_threshold: 0.5,
        }
    }
}

impl WorldModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.ensemble < 2 {
            return bad(format!("ensemble size {} < 2 leaves epistemic variance undefined", self.ensemble));
        }
        if self.history == 0 || self.horizon == 0 {
            return bad("history and horizon must be at least 1".into());
        }
        if !(self.decay.is_finite() && self.decay > 0.0) {
            return bad(format!("forecast decay {} must be positive", self.decay));
        }
        if self.gru_hidden.is_empty() || self.gru_hidden.contains(&0) || self.head_hidden.contains(&0) {
            return bad("layer widths must be positive and the GRU needs a layer".into());
        }
        if !(self.divergence_factor > 0.0) || !(0.0..=1.0).contains(&self.failure_threshold) {
            return bad("divergence factor must be positive and failure threshold in [0, 1]".into());
        }
        Ok(())
    }
}

/// Per-dimension affine normalization of observations and actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub obs_mean: Vec<f64>,
    pub obs_std: Vec<f64>,
    pub act_mean: Vec<f64>,
    pub act_std: Vec<f64>,
}

fn positive_std(s: Vec<f64>) -> Vec<f64> {
    s.into_iter().map(|v| if v > 1e-8 && v.is_finite() { v } else { 1.0 }).collect()
}

fn affine(t: &Tensor, shift: &[f64], scale: &[f64], forward: bool) -> Tensor {
    let c = t.cols();
    debug_assert_eq!(c, shift.len());
    let mut out = t.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let j = i % c;
        *v = if forward { (*v - shift[j]) / scale[j] } else { *v * scale[j] + shift[j] };
    }
    out
}

impl Normalizer {
    pub fn identity(obs_dim: usize, act_dim: usize) -> Self {
        Self { obs_mean: vec![0.0; obs_dim], obs_std: vec![1.0; obs_dim], act_mean: vec![0.0; act_dim], act_std: vec![1.0; act_dim] }
    }

    /// Moments of the dataset; zero-variance dimensions get unit scale.
    pub fn from_dataset(ds: &OfflineDataset) -> Self {
        let (om, os, am, as_) = ds.moments();
        Self { obs_mean: om, obs_std: positive_std(os), act_mean: am, act_std: positive_std(as_) }
    }

    pub fn obs(&self, t: &Tensor) -> Tensor {
        affine(t, &self.obs_mean, &self.obs_std, true)
    }

    pub fn obs_inverse(&self, t: &Tensor) -> Tensor {
        affine(t, &self.obs_mean, &self.obs_std, false)
    }

    pub fn act(&self, t: &Tensor) -> Tensor {
        affine(t, &self.act_mean, &self.act_std, true)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldModel {
    pub config: WorldModelConfig,
    pub base: Gru,
    pub heads: Vec<Mlp>,
    pub failure: Option<Mlp>,
    pub norm: Normalizer,
    /// Per-dimension observation range of the training data.
    pub obs_low: Vec<f64>,
    pub obs_high: Vec<f64>,
    /// Observation dimensions that are known inputs rather than dynamics
    /// (command and previous action); multi-step training feeds the true
    /// values of these back instead of predictions.
    pub exogenous: Vec<usize>,
    pub seed: u64,
}

fn head_dims(features: usize, hidden: &[usize], out: usize) -> Vec<usize> {
    std::iter::once(features).chain(hidden.iter().copied()).chain(std::iter::once(out)).collect()
}

fn head_activations(dims: &[usize], hidden: Activation) -> Vec<Activation> {
    let mut a = vec![hidden; dims.len() - 1];
    *a.last_mut().unwrap() = Activation::Identity;
    a
}

impl WorldModel {
    pub fn new(
        config: WorldModelConfig,
        obs_dim: usize,
        act_dim: usize,
        norm: Normalizer,
        range: (Vec<f64>, Vec<f64>),
        exogenous: Vec<usize>,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if norm.obs_mean.len() != obs_dim || norm.act_mean.len() != act_dim {
            return Err(Error::Dimension("normalizer widths do not match the model".into()));
        }
        if norm.obs_std.iter().chain(&norm.act_std).any(|s| !(*s > 0.0)) {
            return Err(Error::Config("normalization stds must be strictly positive".into()));
        }
        let base = Gru::new(obs_dim + act_dim, &config.gru_hidden, &mut rng::rng(rng::child(seed, "base")));
        let features = base.out_dim();
        let dims = head_dims(features, &config.head_hidden, 2 * obs_dim);
        let heads = (0..config.ensemble)
            .map(|b| {
                let mut r = rng::rng(rng::child_idx(seed, "head", b as u64));
                Mlp::new(&dims, config.head_activation, Activation::Identity, &mut r)
            })
            .collect();
        let failure = config.failure_head.then(|| {
            let mut r = rng::rng(rng::child(seed, "failure-head"));
            Mlp::new(&head_dims(features, &config.head_hidden, 1), config.head_activation, Activation::Identity, &mut r)
        });
        Ok(Self { config, base, heads, failure, norm, obs_low: range.0, obs_high: range.1, exogenous, seed })
    }

    /// Model sized and normalized for a dataset.
    pub fn for_dataset(config: WorldModelConfig, ds: &OfflineDataset, seed: u64) -> Result<Self> {
        let exogenous = exogenous_dims(ds.meta.env_kind);
        Self::new(config, ds.obs_dim(), ds.act_dim(), Normalizer::from_dataset(ds), ds.obs_range(), exogenous, seed)
    }

    pub fn obs_dim(&self) -> usize {
        self.norm.obs_mean.len()
    }

    pub fn act_dim(&self) -> usize {
        self.norm.act_mean.len()
    }

    pub fn ensemble(&self) -> usize {
        self.heads.len()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let (mut kinds, mut named) = self.base.export("base");
        for (b, h) in self.heads.iter().enumerate() {
            let (k, n) = h.export(&format!("head{b}"));
            kinds.extend(k);
            named.extend(n);
        }
        if let Some(f) = &self.failure {
            let (k, n) = f.export("failure");
            kinds.extend(k);
            named.extend(n);
        }
        let extra = serde_json::json!({
            "config": self.config,
            "norm": self.norm,
            "obs_low": self.obs_low,
            "obs_high": self.obs_high,
            "exogenous": self.exogenous,
        });
        Checkpoint::new("world-model", self.seed, kinds, named, extra)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind("world-model")?;
        fn field<T: serde::de::DeserializeOwned>(c: &Checkpoint, k: &str) -> Result<T> {
            serde_json::from_value(c.meta.extra[k].clone()).map_err(|e| Error::Format(format!("world model {k}: {e}")))
        }
        let config: WorldModelConfig = field(ckpt, "config")?;
        config.validate()?;
        let norm: Normalizer = field(ckpt, "norm")?;
        let (od, ad) = (norm.obs_mean.len(), norm.act_mean.len());
        let mut r = ckpt.reader();
        let base = Gru::import(&mut r, od + ad, &config.gru_hidden)?;
        let features = base.out_dim();
        let dims = head_dims(features, &config.head_hidden, 2 * od);
        let heads = (0..config.ensemble)
            .map(|_| Mlp::import(&mut r, &dims, head_activations(&dims, config.head_activation)))
            .collect::<Result<Vec<_>>>()?;
        let failure = if config.failure_head {
            let d = head_dims(features, &config.head_hidden, 1);
            Some(Mlp::import(&mut r, &d, head_activations(&d, config.head_activation))?)
        } else {
            None
        };
        r.finish()?;
        Ok(Self {
            heads,
            failure,
            base,
            obs_low: field(ckpt, "obs_low")?,
            obs_high: field(ckpt, "obs_high")?,
            exogenous: field(ckpt, "exogenous")?,
            norm,
            seed: ckpt.meta.seed,
            config,
        })
    }
}

/// Command and previous-action dimensions of an environment's observation.
pub fn exogenous_dims(kind: EnvKind) -> Vec<usize> {
    let l = kind.layout();
    l.command.chain(l.prev_action).collect()
}

impl Module for WorldModel {
    fn params(&self) -> Vec<&Tensor> {
        let mut p = self.base.params();
        for h in &self.heads {
            p.extend(h.params());
        }
        if let Some(f) = &self.failure {
            p.extend(f.params());
        }
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.base.params_mut();
        for h in &mut self.heads {
            p.extend(h.params_mut());
        }
        if let Some(f) = &mut self.failure {
            p.extend(f.params_mut());
        }
        p
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn tiny(seed: u64) -> WorldModel {
        let cfg = WorldModelConfig {
            history: 3,
            horizon: 2,
            ensemble: 3,
            gru_hidden: vec![6],
            head_hidden: vec![5],
            ..WorldModelConfig::default()
        };
        let norm = Normalizer {
            obs_mean: vec![0.1, -0.2, 0.0, 0.3],
            obs_std: vec![1.0, 2.0, 0.5, 1.5],
            act_mean: vec![0.05],
            act_std: vec![0.7],
        };
        WorldModel::new(cfg, 4, 1, norm, (vec![-1.0; 4], vec![1.0; 4]), exogenous_dims(EnvKind::Pendulum), seed).unwrap()
    }

    #[test]
    fn normalization_round_trips() {
        let m = tiny(1);
        let o = Tensor::new(vec![2, 4], vec![0.3, -1.7, 2.2, 9.1, -4.0, 0.0, 1e-3, 5.5]).unwrap();
        let back = m.norm.obs_inverse(&m.norm.obs(&o));
        for (a, b) in back.data().iter().zip(o.data()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn single_head_is_rejected() {
        let cfg = WorldModelConfig { ensemble: 1, ..WorldModelConfig::default() };
        assert!(cfg.validate().unwrap_err().is_config());
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = tiny(4);
        let back = WorldModel::from_checkpoint(&Checkpoint::from_bytes(&m.to_checkpoint().to_bytes()).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn heads_have_independent_initializations() {
        let m = tiny(2);
        assert_ne!(m.heads[0], m.heads[1]);
    }
}
