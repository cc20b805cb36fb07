use crate::error::{Error, Result};

/// Penalized reward `r - λ·u`.
pub fn penalize(reward: f64, uncertainty: f64, lambda: f64) -> Result<f64> {
    if !(uncertainty >= 0.0) {
        return Err(Error::Contract(format!("uncertainty {uncertainty} must be non-negative")));
    }
    Ok(reward - lambda * uncertainty)
}

/// Generalized advantage estimation over one trajectory. `dones[t]` ends
/// the episode after step `t` (no continuation value); `bootstrap` is the
/// value of the state following the last step when it is not done.
pub fn gae(rewards: &[f64], values: &[f64], dones: &[bool], bootstrap: f64, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    assert!(values.len() == n && dones.len() == n, "gae inputs must be length-aligned");
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = bootstrap;
    for t in (0..n).rev() {
        let cont = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * cont - values[t];
        next_adv = delta + gamma * lambda * cont * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Rollout storage for `agents` parallel trajectories of up to `steps`
/// steps, laid out time-major (`index = t * agents + agent`).
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBuffer {
    pub agents: usize,
    pub steps: usize,
    pub obs_dim: usize,
    pub act_dim: usize,
    /// Penalty weight used for every stored step.
    pub lambda: f64,
    pub obs: Vec<f64>,
    /// Sampled (unclipped) actions.
    pub actions: Vec<f64>,
    /// Action means of the collecting policy.
    pub action_means: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub uncertainty: Vec<f64>,
    pub penalized: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
    /// Whether the slot holds a real step (false after an agent terminated).
    pub active: Vec<bool>,
    /// Value of the state after the last step of each agent.
    pub bootstrap: Vec<f64>,
    pub advantages: Option<Vec<f64>>,
    pub returns: Option<Vec<f64>>,
    /// Old policy log-std per action dimension.
    pub log_std: Vec<f64>,
}

/// One agent-step to be stored.
pub struct StepRecord<'a> {
    pub obs: &'a [f64],
    pub action: &'a [f64],
    pub action_mean: &'a [f64],
    pub log_prob: f64,
    pub reward: f64,
    pub uncertainty: f64,
    pub value: f64,
    pub done: bool,
}

impl RolloutBuffer {
    pub fn new(agents: usize, steps: usize, obs_dim: usize, act_dim: usize, lambda: f64, log_std: Vec<f64>) -> Self {
        let n = agents * steps;
        Self {
            agents,
            steps,
            obs_dim,
            act_dim,
            lambda,
            obs: vec![0.0; n * obs_dim],
            actions: vec![0.0; n * act_dim],
            action_means: vec![0.0; n * act_dim],
            log_probs: vec![0.0; n],
            rewards: vec![0.0; n],
            uncertainty: vec![0.0; n],
            penalized: vec![0.0; n],
            values: vec![0.0; n],
            dones: vec![false; n],
            active: vec![false; n],
            bootstrap: vec![0.0; agents],
            advantages: None,
            returns: None,
            log_std,
        }
    }

    pub fn index(&self, t: usize, agent: usize) -> usize {
        t * self.agents + agent
    }

    /// Stores a step; the penalized reward is derived here.
    pub fn record(&mut self, t: usize, agent: usize, s: StepRecord<'_>) -> Result<()> {
        if s.obs.len() != self.obs_dim || s.action.len() != self.act_dim {
            return Err(Error::Contract("step record widths differ from the buffer".into()));
        }
        let i = self.index(t, agent);
        self.obs[i * self.obs_dim..(i + 1) * self.obs_dim].copy_from_slice(s.obs);
        self.actions[i * self.act_dim..(i + 1) * self.act_dim].copy_from_slice(s.action);
        self.action_means[i * self.act_dim..(i + 1) * self.act_dim].copy_from_slice(s.action_mean);
        self.log_probs[i] = s.log_prob;
        self.rewards[i] = s.reward;
        self.uncertainty[i] = s.uncertainty;
        self.penalized[i] = penalize(s.reward, s.uncertainty, self.lambda)?;
        self.values[i] = s.value;
        self.dones[i] = s.done;
        self.active[i] = true;
        self.advantages = None;
        self.returns = None;
        Ok(())
    }

    pub fn active_steps(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    /// Computes advantages and returns on the penalized rewards, agent by
    /// agent over its active steps.
    pub fn finalize(&mut self, gamma: f64, gae_lambda: f64) {
        let n = self.agents * self.steps;
        let mut adv = vec![0.0; n];
        let mut ret = vec![0.0; n];
        for a in 0..self.agents {
            let idx: Vec<usize> = (0..self.steps).map(|t| self.index(t, a)).filter(|&i| self.active[i]).collect();
            if idx.is_empty() {
                continue;
            }
            let r: Vec<f64> = idx.iter().map(|&i| self.penalized[i]).collect();
            let v: Vec<f64> = idx.iter().map(|&i| self.values[i]).collect();
            let d: Vec<bool> = idx.iter().map(|&i| self.dones[i]).collect();
            let (ad, rt) = gae(&r, &v, &d, self.bootstrap[a], gamma, gae_lambda);
            for (k, &i) in idx.iter().enumerate() {
                adv[i] = ad[k];
                ret[i] = rt[k];
            }
        }
        self.advantages = Some(adv);
        self.returns = Some(ret);
    }

    pub fn is_finalized(&self) -> bool {
        self.advantages.is_some()
    }

    /// Mean raw reward per agent-step slot, counting slots after an
    /// agent's termination as zero.
    pub fn mean_slot_reward(&self) -> f64 {
        let s: f64 = self.rewards.iter().zip(&self.active).filter(|(_, &a)| a).map(|(r, _)| r).sum();
        s / (self.agents * self.steps) as f64
    }

    pub fn mean_uncertainty(&self) -> f64 {
        let (s, c) = self
            .uncertainty
            .iter()
            .zip(&self.active)
            .filter(|(_, &a)| a)
            .fold((0.0, 0usize), |(s, c), (u, _)| (s + u, c + 1));
        if c == 0 {
            0.0
        } else {
            s / c as f64
        }
    }
}

/// Zero-mean, unit-std copy (population std; unchanged if degenerate).
pub fn normalize_advantages(adv: &[f64]) -> Vec<f64> {
    let n = adv.len() as f64;
    if adv.is_empty() {
        return Vec::new();
    }
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-12 {
        return adv.iter().map(|a| a - mean).collect();
    }
    adv.iter().map(|a| (a - mean) / std).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn penalty_identities() {
        assert_eq!(penalize(0.7, 3.0, 0.0).unwrap(), 0.7);
        assert_eq!(penalize(1.0, 0.5, 1.0).unwrap(), 0.5);
        assert!(matches!(penalize(1.0, -1e-9, 1.0), Err(Error::Contract(_))));
    }

    #[test]
    fn gae_limits() {
        let (a, r) = gae(&[1.0], &[0.0], &[false], 0.0, 1.0, 1.0);
        assert_eq!((a[0], r[0]), (1.0, 1.0));
        let rewards = [0.5, -0.2, 1.0];
        let values = [0.1, 0.4, -0.3];
        let dones = [false, true, false];
        let (a, _) = gae(&rewards, &values, &dones, 0.7, 0.9, 0.0);
        let next = [values[1], values[2], 0.7];
        for t in 0..3 {
            let cont = if dones[t] { 0.0 } else { 1.0 };
            assert!((a[t] - (rewards[t] + 0.9 * next[t] * cont - values[t])).abs() < 1e-15);
        }
    }

    #[test]
    fn advantage_normalization() {
        let a = normalize_advantages(&[1.0, 2.0, 3.0, 10.0]);
        let m: f64 = a.iter().sum::<f64>() / 4.0;
        let s = (a.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / 4.0).sqrt();
        assert!(m.abs() < 1e-12 && (s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn records_store_penalized_reward() {
        let mut b = RolloutBuffer::new(2, 2, 1, 1, 2.0, vec![0.0]);
        let rec = |r, u| StepRecord { obs: &[0.0], action: &[0.0], action_mean: &[0.0], log_prob: 0.0, reward: r, uncertainty: u, value: 0.0, done: false };
        b.record(0, 1, rec(1.0, 0.25)).unwrap();
        assert_eq!(b.penalized[b.index(0, 1)], 0.5);
        assert_eq!(b.active_steps(), 1);
        assert!(b.record(1, 0, rec(1.0, -1.0)).is_err());
    }
}
