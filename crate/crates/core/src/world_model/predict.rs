use std::collections::VecDeque;

use super::{AleatoricSpace, Reduction, WorldModel};
use crate::envs::Controller;
use crate::error::{dim_err, Error, Result};
use crate::nn::tape::sigmoid;
use crate::nn::{Tensor, LOG_STD_MAX, LOG_STD_MIN};

type Rows = Vec<Vec<f64>>;

/// Epistemic and aleatoric uncertainty of one prediction, in normalized
/// observation units.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyEstimate {
    /// Variance across head means, per dimension.
    pub epistemic: Vec<f64>,
    pub epistemic_scalar: f64,
    /// Mean predicted variance (or std) over heads, per dimension.
    pub aleatoric: Vec<f64>,
    pub aleatoric_scalar: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImaginedStep {
    /// Ensemble-mean next observation.
    pub obs: Vec<f64>,
    pub uncertainty: UncertaintyEstimate,
    pub action: Vec<f64>,
    pub failure_prob: f64,
    pub diverged: bool,
}

/// Predictions for a batch of independent histories.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchPrediction {
    /// Ensemble mean, `[batch, obs]`.
    pub obs: Tensor,
    pub obs_norm: Tensor,
    pub epistemic: Tensor,
    pub epistemic_scalar: Vec<f64>,
    pub aleatoric: Tensor,
    pub aleatoric_scalar: Vec<f64>,
    pub failure_prob: Vec<f64>,
    pub diverged: Vec<bool>,
}

impl BatchPrediction {
    pub fn uncertainty(&self, row: usize) -> UncertaintyEstimate {
        UncertaintyEstimate {
            epistemic: self.epistemic.row_slice(row).to_vec(),
            epistemic_scalar: self.epistemic_scalar[row],
            aleatoric: self.aleatoric.row_slice(row).to_vec(),
            aleatoric_scalar: self.aleatoric_scalar[row],
        }
    }
}

/// Mean and population variance of a small sample, computed on sorted
/// values so the result does not depend on the order of the heads, and
/// identical values give exactly that value and zero variance.
fn order_free_moments(v: &mut [f64]) -> (f64, f64) {
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let first = v[0];
    let mean = first + v.iter().map(|x| x - first).sum::<f64>() / n;
    let mut pair = 0.0;
    for i in 0..v.len() {
        for j in i + 1..v.len() {
            pair += (v[i] - v[j]) * (v[i] - v[j]);
        }
    }
    (mean, pair / (n * n))
}

/// Scalar summary over the selected dimensions of one row.
fn reduce(row: &[f64], dims: &[usize], how: Reduction) -> f64 {
    let vals = dims.iter().map(|&d| row[d]);
    match how {
        Reduction::Mean => vals.sum::<f64>() / dims.len() as f64,
        Reduction::Max => vals.fold(0.0, f64::max),
    }
}

impl WorldModel {
    /// Normalized `[obs | act]` network input.
    pub fn encode_input(&self, obs: &Tensor, act: &Tensor) -> Result<Tensor> {
        if obs.cols() != self.obs_dim() || act.cols() != self.act_dim() || obs.rows() != act.rows() {
            return Err(dim_err!(
                "model takes [b, {}] observations and [b, {}] actions, got {:?} and {:?}",
                self.obs_dim(),
                self.act_dim(),
                obs.shape(),
                act.shape()
            ));
        }
        Ok(Tensor::concat_cols(&[&self.norm.obs(obs), &self.norm.act(act)]))
    }

    /// One step of the shared recurrent base.
    pub fn base_step(&self, hidden: &[Tensor], input: &Tensor) -> Result<Vec<Tensor>> {
        Ok(self.base.forward(hidden, input)?.0)
    }

    /// Gaussian parameters `(mean, log_std)` of every head over the
    /// normalized next observation. `current` is the normalized current
    /// observation, added back when heads predict residuals.
    pub fn heads_forward(&self, features: &Tensor, current: &Tensor) -> Result<Vec<(Tensor, Tensor)>> {
        let od = self.obs_dim();
        if current.cols() != od || current.rows() != features.rows() {
            return Err(dim_err!("current observation {:?} does not match features {:?}", current.shape(), features.shape()));
        }
        self.heads
            .iter()
            .map(|h| {
                let out = h.forward(features)?;
                let mut mean = out.slice_cols(0, od);
                if self.config.residual {
                    mean = mean.zip_map(current, |d, c| d + c);
                }
                let log_std = out.slice_cols(od, od).map(|s| s.clamp(LOG_STD_MIN, LOG_STD_MAX));
                Ok((mean, log_std))
            })
            .collect()
    }

    /// Ensemble statistics of head outputs.
    pub fn combine(&self, heads: &[(Tensor, Tensor)], features: &Tensor) -> Result<BatchPrediction> {
        let (rows, od) = (heads[0].0.rows(), self.obs_dim());
        let b = heads.len();
        let mut mean = vec![0.0; rows * od];
        let mut epi = vec![0.0; rows * od];
        let mut ale = vec![0.0; rows * od];
        let mut buf = vec![0.0; b];
        for i in 0..rows * od {
            for (k, (m, _)) in heads.iter().enumerate() {
                buf[k] = m.data()[i];
            }
            let (mu, var) = order_free_moments(&mut buf);
            mean[i] = mu;
            epi[i] = var;
            for (k, (_, s)) in heads.iter().enumerate() {
                buf[k] = match self.config.aleatoric {
                    AleatoricSpace::Variance => (2.0 * s.data()[i]).exp(),
                    AleatoricSpace::Std => s.data()[i].exp(),
                };
            }
            ale[i] = order_free_moments(&mut buf).0;
        }
        let obs_norm = Tensor::from_raw(vec![rows, od], mean);
        let obs = self.norm.obs_inverse(&obs_norm);
        let epistemic = Tensor::from_raw(vec![rows, od], epi);
        let aleatoric = Tensor::from_raw(vec![rows, od], ale);
        let failure_prob = match &self.failure {
            Some(f) => f.forward(features)?.data().iter().map(|&z| sigmoid(z)).collect(),
            None => vec![0.0; rows],
        };
        let diverged = (0..rows).map(|r| self.is_diverged(obs.row_slice(r))).collect();
        let dims = self.modeled_dims();
        Ok(BatchPrediction {
            epistemic_scalar: (0..rows).map(|r| reduce(epistemic.row_slice(r), &dims, self.config.reduction)).collect(),
            aleatoric_scalar: (0..rows).map(|r| reduce(aleatoric.row_slice(r), &dims, Reduction::Mean)).collect(),
            obs,
            obs_norm,
            epistemic,
            aleatoric,
            failure_prob,
            diverged,
        })
    }

    /// Observation dimensions the model actually predicts (everything but
    /// the exogenous ones); the uncertainty scalars summarize these.
    pub fn modeled_dims(&self) -> Vec<usize> {
        let d: Vec<usize> = (0..self.obs_dim()).filter(|i| !self.exogenous.contains(i)).collect();
        if d.is_empty() {
            (0..self.obs_dim()).collect()
        } else {
            d
        }
    }

    /// Whether an observation lies implausibly far outside the data range.
    pub fn is_diverged(&self, obs: &[f64]) -> bool {
        obs.iter().enumerate().any(|(i, &o)| {
            let (lo, hi) = (self.obs_low[i], self.obs_high[i]);
            let range = (hi - lo).max(1e-6);
            !o.is_finite() || (o - 0.5 * (lo + hi)).abs() > self.config.divergence_factor * range
        })
    }

    /// Next-observation prediction from `M` history frames and the actions
    /// taken at each of them. Shorter histories are left-padded with their
    /// first frame; longer ones keep the most recent `M`.
    pub fn predict_next(&self, history_obs: &[Vec<f64>], history_act: &[Vec<f64>]) -> Result<ImaginedStep> {
        if history_obs.len() != history_act.len() || history_obs.is_empty() {
            return Err(Error::Input("predict_next needs equally many (>= 1) observations and actions".into()));
        }
        let (obs, act) = self.padded(history_obs, history_act)?;
        let action = act.last().unwrap().clone();
        let mut roll = BatchRollout::start(self, &rows(&obs)?, &rows(&act[..act.len() - 1])?)?;
        let pred = roll.step(&Tensor::from_raw(vec![1, action.len()], action.clone()))?;
        Ok(ImaginedStep {
            obs: pred.obs.into_data(),
            uncertainty: UncertaintyEstimate {
                epistemic: pred.epistemic.into_data(),
                epistemic_scalar: pred.epistemic_scalar[0],
                aleatoric: pred.aleatoric.into_data(),
                aleatoric_scalar: pred.aleatoric_scalar[0],
            },
            action,
            failure_prob: pred.failure_prob[0],
            diverged: pred.diverged[0],
        })
    }

    fn padded(&self, obs: &[Vec<f64>], act: &[Vec<f64>]) -> Result<(Rows, Rows)> {
        let m = self.config.history;
        for o in obs {
            if o.len() != self.obs_dim() || o.iter().any(|v| !v.is_finite()) {
                return Err(Error::Input("history observation has the wrong width or a non-finite entry".into()));
            }
        }
        for a in act {
            if a.len() != self.act_dim() || a.iter().any(|v| !v.is_finite()) {
                return Err(Error::Input("history action has the wrong width or a non-finite entry".into()));
            }
        }
        let keep = obs.len().min(m);
        let pad = m - keep;
        let mut o: Vec<Vec<f64>> = std::iter::repeat_n(obs[obs.len() - keep].clone(), pad).collect();
        let mut a: Vec<Vec<f64>> = std::iter::repeat_n(act[act.len() - keep].clone(), pad).collect();
        o.extend_from_slice(&obs[obs.len() - keep..]);
        a.extend_from_slice(&act[act.len() - keep..]);
        Ok((o, a))
    }

    /// Autoregressive rollout of `steps` predictions. `history_act` holds
    /// the actions taken at all but the last history frame; the action at
    /// the last frame and every later one comes from `source`.
    pub fn rollout(
        &self,
        history_obs: &[Vec<f64>],
        history_act: &[Vec<f64>],
        source: ActionSource<'_>,
        steps: usize,
    ) -> Result<Rollout> {
        if steps == 0 {
            return Err(Error::Input("rollout needs at least one step".into()));
        }
        if history_obs.is_empty() || history_act.len() + 1 != history_obs.len() {
            return Err(Error::Input("rollout history needs one more observation than actions".into()));
        }
        if let ActionSource::Sequence(seq) = source {
            if seq.len() < steps {
                return Err(Error::Input(format!("{steps} steps requested, {} actions given", seq.len())));
            }
        }
        // pad with a dummy final action so both lists have equal length
        let mut act = history_act.to_vec();
        act.push(vec![0.0; self.act_dim()]);
        let (obs, act) = self.padded(history_obs, &act)?;
        let mut roll = BatchRollout::start(self, &rows(&obs)?, &rows(&act[..act.len() - 1])?)?;
        let mut out = Rollout { steps: Vec::with_capacity(steps), truncated: None };
        let mut last = obs.last().unwrap().clone();
        for t in 0..steps {
            let action = match source {
                ActionSource::Sequence(seq) => seq[t].clone(),
                ActionSource::Policy(p) => p.act(&last),
            };
            if action.len() != self.act_dim() || action.iter().any(|v| !v.is_finite()) {
                return Err(Error::Input(format!("bad action at step {t}")));
            }
            let pred = roll.step(&Tensor::from_raw(vec![1, action.len()], action.clone()))?;
            let step = ImaginedStep {
                obs: pred.obs.row_slice(0).to_vec(),
                uncertainty: pred.uncertainty(0),
                action,
                failure_prob: pred.failure_prob[0],
                diverged: pred.diverged[0],
            };
            last = step.obs.clone();
            let stop = if step.diverged {
                Some(Truncation::Diverged)
            } else if step.failure_prob > self.config.failure_threshold {
                Some(Truncation::Failure)
            } else {
                None
            };
            out.steps.push(step);
            if stop.is_some() {
                out.truncated = stop;
                break;
            }
        }
        Ok(out)
    }
}

fn rows(frames: &[Vec<f64>]) -> Result<Vec<Tensor>> {
    frames.iter().map(|f| Tensor::new(vec![1, f.len()], f.clone())).collect()
}

/// Where rollout actions come from.
#[derive(Clone, Copy)]
pub enum ActionSource<'a> {
    Sequence(&'a [Vec<f64>]),
    Policy(&'a dyn Controller),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Truncation {
    Failure,
    Diverged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub steps: Vec<ImaginedStep>,
    pub truncated: Option<Truncation>,
}

/// Stepwise batched rollout state over many independent histories.
#[derive(Debug, Clone)]
pub struct BatchRollout<'m> {
    model: &'m WorldModel,
    hidden: Vec<Tensor>,
    window: VecDeque<Tensor>,
    last_obs: Tensor,
}

impl<'m> BatchRollout<'m> {
    /// Consumes `history_obs[..k]` with `history_act[..k]` where
    /// `k = history_obs.len() - 1`; the last observation awaits an action.
    pub fn start(model: &'m WorldModel, history_obs: &[Tensor], history_act: &[Tensor]) -> Result<Self> {
        if history_obs.is_empty() || history_act.len() + 1 != history_obs.len() {
            return Err(Error::Input("history needs one more observation frame than action frames".into()));
        }
        let batch = history_obs[0].rows();
        let mut roll = Self {
            model,
            hidden: model.base.zero_state(batch),
            window: VecDeque::with_capacity(model.config.history),
            last_obs: history_obs.last().unwrap().clone(),
        };
        for (o, a) in history_obs.iter().zip(history_act) {
            let input = model.encode_input(o, a)?;
            roll.advance(input)?;
        }
        Ok(roll)
    }

    fn advance(&mut self, input: Tensor) -> Result<()> {
        match self.model.config.history_mode {
            super::HistoryMode::Carry => {
                self.hidden = self.model.base_step(&self.hidden, &input)?;
            }
            super::HistoryMode::Window => {
                self.window.push_back(input);
                while self.window.len() > self.model.config.history {
                    self.window.pop_front();
                }
                let batch = self.last_obs.rows();
                let mut h = self.model.base.zero_state(batch);
                for x in &self.window {
                    h = self.model.base_step(&h, x)?;
                }
                self.hidden = h;
            }
        }
        Ok(())
    }

    pub fn last_obs(&self) -> &Tensor {
        &self.last_obs
    }

    /// Replaces the pending observation, e.g. to insert known command or
    /// previous-action values into a prediction.
    pub fn set_last_obs(&mut self, obs: Tensor) -> Result<()> {
        if obs.shape() != self.last_obs.shape() {
            return Err(dim_err!("expected {:?}, got {:?}", self.last_obs.shape(), obs.shape()));
        }
        self.last_obs = obs;
        Ok(())
    }

    /// Applies `action` at the pending observation and predicts the next.
    pub fn step(&mut self, action: &Tensor) -> Result<BatchPrediction> {
        let current = self.model.norm.obs(&self.last_obs);
        let input = self.model.encode_input(&self.last_obs, action)?;
        self.advance(input)?;
        let features = self.hidden.last().unwrap();
        let heads = self.model.heads_forward(features, &current)?;
        let pred = self.model.combine(&heads, features)?;
        self.last_obs = pred.obs.clone();
        Ok(pred)
    }
}
