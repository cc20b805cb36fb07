use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{Feedback, LossKind, WorldModel};
use crate::datasets::{sample_windows, OfflineDataset, WindowBatch};
use crate::error::{Error, Result};
use crate::nn::layers::{BoundGru, BoundMlp};
use crate::nn::loss::{bce_with_logits, gaussian_nll_rows, squared_error_rows};
use crate::nn::{clip_global_norm, collect_grads, AdamConfig, AdamState, Backend, Module, Tape, Tensor};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Bootstrap inclusion probability per (window, head).
    pub keep_prob: f64,
    /// Global gradient-norm clip; off when `None`.
    pub grad_clip: Option<f64>,
    /// Weight of the failure-head cross-entropy.
    pub failure_weight: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { steps: 2500, batch: 64, lr: 1e-4, weight_decay: 1e-5, keep_prob: 0.8, grad_clip: None, failure_weight: 1.0, seed: 0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Optimized objective per step.
    pub total: Vec<f64>,
    /// Multi-step prediction term per step.
    pub prediction: Vec<f64>,
}

/// World-model parameters on a backend, in [`Module::params`] order.
#[derive(Debug, Clone)]
pub struct BoundModel<V> {
    pub base: BoundGru<V>,
    pub heads: Vec<BoundMlp<V>>,
    pub failure: Option<BoundMlp<V>>,
}

impl<V: Clone> BoundModel<V> {
    pub fn vars(&self) -> Vec<V> {
        let mut v = self.base.vars();
        for h in &self.heads {
            v.extend(h.vars());
        }
        if let Some(f) = &self.failure {
            v.extend(f.vars());
        }
        v
    }
}

pub struct LossParts<V> {
    pub total: V,
    pub prediction: V,
    pub failure: Option<V>,
}

/// Contiguous column runs `(start, width, exogenous)` of an observation.
fn runs(dim: usize, exogenous: &[usize]) -> Vec<(usize, usize, bool)> {
    let mut out: Vec<(usize, usize, bool)> = Vec::new();
    for i in 0..dim {
        let ex = exogenous.contains(&i);
        match out.last_mut() {
            Some((_, w, e)) if *e == ex => *w += 1,
            _ => out.push((i, 1, ex)),
        }
    }
    out
}

impl WorldModel {
    pub fn bind<B: Backend>(&self, b: &mut B) -> BoundModel<B::V> {
        BoundModel {
            base: self.base.bind(b),
            heads: self.heads.iter().map(|h| h.bind(b)).collect(),
            failure: self.failure.as_ref().map(|f| f.bind(b)),
        }
    }

    /// Multi-step objective on one window batch: the base reads the `M`
    /// history frames, then forecasts `N` steps, each fed the ensemble
    /// mean of the previous prediction (with exogenous dimensions taken
    /// from data). Step `k` (1-based) contributes `α^k` times the mean
    /// over heads of that head's bootstrap-masked per-window loss; the sum
    /// is divided by `N`.
    pub fn window_loss<B: Backend>(
        &self,
        b: &mut B,
        bound: &BoundModel<B::V>,
        batch: &WindowBatch,
        failure_weight: f64,
        mut sample_rng: Option<&mut Rng>,
    ) -> Result<LossParts<B::V>> {
        let (m, n) = (batch.history(), batch.horizon());
        let rows = batch.batch();
        let od = self.obs_dim();
        let heads = self.heads.len();
        if batch.mask.cols() != heads {
            return Err(Error::Dimension(format!("mask has {} heads, model {heads}", batch.mask.cols())));
        }
        let mut h: Vec<B::V> = self.base.zero_state(rows).into_iter().map(|t| b.constant(t)).collect();
        for k in 0..m {
            let x = self.encode_input(&batch.history_obs[k], &batch.history_act[k])?;
            let x = b.constant(x);
            h = bound.base.step(b, &h, &x);
        }
        let mut current = b.constant(self.norm.obs(&batch.history_obs[m - 1]));
        let masks: Vec<(B::V, f64)> = (0..heads)
            .map(|j| {
                let col = batch.mask.slice_cols(j, 1);
                let count = col.sum();
                (b.constant(col), count)
            })
            .collect();
        let obs_runs = runs(od, &self.exogenous);
        let mut prediction: Option<B::V> = None;
        let mut failure: Option<B::V> = None;
        for k in 0..n {
            let features = h.last().unwrap().clone();
            let target_t = self.norm.obs(&batch.future_obs[k]);
            let target = b.constant(target_t.clone());
            let mut means = Vec::with_capacity(heads);
            let mut log_stds = Vec::with_capacity(heads);
            let mut step_loss: Option<B::V> = None;
            for (head, (mask, count)) in bound.heads.iter().zip(&masks) {
                let out = head.forward(b, &features);
                let mut mean = b.slice_cols(&out, 0, od);
                if self.config.residual {
                    mean = b.add(&mean, &current);
                }
                let log_std = b.slice_cols(&out, od, od);
                let per_row = match self.config.loss {
                    LossKind::Nll => gaussian_nll_rows(b, &mean, &log_std, &target),
                    LossKind::Mse => squared_error_rows(b, &mean, &target),
                };
                means.push(mean);
                log_stds.push(log_std);
                if *count == 0.0 {
                    continue;
                }
                let masked = b.mul(&per_row, mask);
                let s = b.sum(&masked);
                let s = b.scale(&s, 1.0 / (count * heads as f64));
                step_loss = Some(match step_loss {
                    Some(acc) => b.add(&acc, &s),
                    None => s,
                });
            }
            if let Some(l) = step_loss {
                let w = self.config.decay.powi(k as i32 + 1) / n as f64;
                let l = b.scale(&l, w);
                prediction = Some(match prediction {
                    Some(acc) => b.add(&acc, &l),
                    None => l,
                });
            }
            if let Some(fh) = &bound.failure {
                let logits = fh.forward(b, &features);
                let bce = bce_with_logits(b, &logits, &batch.future_failure[k]);
                let bce = b.mean(&bce);
                let bce = b.scale(&bce, 1.0 / n as f64);
                failure = Some(match failure {
                    Some(acc) => b.add(&acc, &bce),
                    None => bce,
                });
            }
            if k + 1 == n {
                break;
            }
            let next = match (self.config.feedback, sample_rng.as_deref_mut()) {
                (Feedback::Sample, Some(r)) => {
                    let j = r.random_range(0..heads);
                    let eps = Tensor::from_raw(vec![rows, od], (0..rows * od).map(|_| rng::normal(r)).collect());
                    let eps = b.constant(eps);
                    let std = b.exp(&log_stds[j]);
                    let noise = b.mul(&std, &eps);
                    b.add(&means[j], &noise)
                }
                _ => {
                    let mut acc = means[0].clone();
                    for mm in &means[1..] {
                        acc = b.add(&acc, mm);
                    }
                    b.scale(&acc, 1.0 / heads as f64)
                }
            };
            let next = if self.exogenous.is_empty() {
                next
            } else {
                let parts: Vec<B::V> = obs_runs
                    .iter()
                    .map(|&(s, w, ex)| if ex { b.constant(target_t.slice_cols(s, w)) } else { b.slice_cols(&next, s, w) })
                    .collect();
                b.concat_cols(&parts)
            };
            let act = b.constant(self.norm.act(&batch.future_act[k]));
            let x = b.concat_cols(&[next.clone(), act]);
            h = bound.base.step(b, &h, &x);
            current = next;
        }
        let prediction = match prediction {
            Some(p) => p,
            None => b.constant(Tensor::scalar(0.0)),
        };
        let total = match &failure {
            Some(f) if failure_weight != 0.0 => {
                let f = b.scale(f, failure_weight);
                b.add(&prediction, &f)
            }
            _ => prediction.clone(),
        };
        Ok(LossParts { total, prediction, failure })
    }
}

/// Fits `model` to `ds` with Adam on freshly sampled window batches.
pub fn train(model: &mut WorldModel, ds: &OfflineDataset, cfg: &TrainConfig) -> Result<TrainReport> {
    if ds.obs_dim() != model.obs_dim() || ds.act_dim() != model.act_dim() {
        return Err(Error::Dimension("dataset and model dimensions differ".into()));
    }
    let adam_cfg = AdamConfig { lr: cfg.lr, weight_decay: cfg.weight_decay, ..AdamConfig::default() };
    let mut adam = AdamState::new(adam_cfg, &model.params());
    let mut window_rng = rng::rng(rng::child(cfg.seed, "windows"));
    let mut feedback_rng = rng::rng(rng::child(cfg.seed, "feedback"));
    let mut report = TrainReport::default();
    let (m, n, heads) = (model.config.history, model.config.horizon, model.ensemble());
    for step in 0..cfg.steps {
        let batch = sample_windows(ds, m, n, cfg.batch, heads, cfg.keep_prob, &mut window_rng)?;
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let loss = model.window_loss(&mut tape, &bound, &batch, cfg.failure_weight, Some(&mut feedback_rng))?;
        let total = tape.value(&loss.total).item();
        let pred = tape.value(&loss.prediction).item();
        if !total.is_finite() {
            return Err(Error::NonFinite(format!(
                "world-model loss became {total} at step {step} (prediction term {pred}); try a lower learning rate"
            )));
        }
        let grads = tape.backward(loss.total)?;
        let mut g = collect_grads(&bound.vars(), &grads);
        if let Some(c) = cfg.grad_clip {
            clip_global_norm(&mut g, c);
        }
        adam.step(model.params_mut(), &g)?;
        report.total.push(total);
        report.prediction.push(pred);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::window::tests::tagged;
    use crate::nn::Eager;
    use crate::world_model::tests::tiny;

    #[test]
    fn column_runs() {
        assert_eq!(runs(4, &[1, 3]), vec![(0, 1, false), (1, 1, true), (2, 1, false), (3, 1, true)]);
        assert_eq!(runs(3, &[]), vec![(0, 3, false)]);
    }

    #[test]
    fn eager_and_tape_losses_agree() {
        let m = tiny(3);
        let ds = pendulumish();
        let mut r = rng::rng(4);
        let batch = sample_windows(&ds, 3, 2, 5, 3, 0.8, &mut r).unwrap();
        let mut e = Eager;
        let be = m.bind(&mut e);
        let le = m.window_loss(&mut e, &be, &batch, 1.0, None).unwrap();
        let mut t = Tape::new();
        let bt = m.bind(&mut t);
        let lt = m.window_loss(&mut t, &bt, &batch, 1.0, None).unwrap();
        assert_eq!(le.total.item(), t.value(&lt.total).item());
    }

    /// Tagged episodes reshaped to the tiny model's 4-d observations.
    fn pendulumish() -> OfflineDataset {
        let src = tagged(&[12, 9, 15]);
        let eps = src
            .episodes()
            .iter()
            .map(|e| {
                let mut ep = crate::datasets::Episode::new(4, 1, &e.obs(0)[..4].iter().map(|v| v * 0.1).collect::<Vec<_>>());
                for t in 0..e.len() {
                    let o: Vec<f64> = e.obs(t + 1)[..4].iter().map(|v| (v * 0.1).sin()).collect();
                    ep.push(&[e.action(t)[0] * 0.05], &o, 0.0, e.dones[t], false);
                }
                ep
            })
            .collect();
        OfflineDataset::new(src.meta.clone(), 4, 1, eps).unwrap()
    }
}
