//! Reward-term library.
//!
//! | term        | point mass                         | pendulum              |
//! |-------------|------------------------------------|-----------------------|
//! | tracking    | `exp(-‖c − v‖² / σ²)`              | `exp(-(c − θ)² / σ²)` |
//! | velocity    | `max(0, ‖v‖ − speed_limit)²`       | `ω²`                  |
//! | action rate | `‖a′ − a‖²`                        | same                  |
//! | effort      | `‖a‖²`                             | same                  |
//! | failure     | `1` when the failure flag is set   | same                  |
//!
//! Each term is multiplied by its weight; the total is the plain sum of the
//! weighted terms. Legged-robot terms without a planar analog (feet air
//! time, foot clearance, contacts, joint deviation, flat orientation) have
//! no counterpart here.

use serde::{Deserialize, Serialize};

use super::{EnvConfig, EnvKind};

/// Temperature of the exponential tracking kernel.
pub const TRACKING_SIGMA: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub tracking: f64,
    pub velocity: f64,
    pub action_rate: f64,
    pub effort: f64,
    pub failure: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self::point_mass()
    }
}

impl RewardWeights {
    pub fn point_mass() -> Self {
        Self { tracking: 1.0, velocity: -2.0, action_rate: -0.01, effort: -0.01, failure: -10.0 }
    }

    pub fn pendulum() -> Self {
        Self { tracking: 1.0, velocity: -0.05, action_rate: -0.01, effort: -0.01, failure: -10.0 }
    }

    pub fn zero() -> Self {
        Self { tracking: 0.0, velocity: 0.0, action_rate: 0.0, effort: 0.0, failure: 0.0 }
    }

    pub fn is_finite(&self) -> bool {
        [self.tracking, self.velocity, self.action_rate, self.effort, self.failure].iter().all(|w| w.is_finite())
    }
}

/// Weighted reward terms for one transition.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RewardBreakdown {
    pub tracking: f64,
    pub velocity: f64,
    pub action_rate: f64,
    pub effort: f64,
    pub failure: f64,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn terms(&self) -> [(&'static str, f64); 5] {
        [
            ("tracking", self.tracking),
            ("velocity", self.velocity),
            ("action_rate", self.action_rate),
            ("effort", self.effort),
            ("failure", self.failure),
        ]
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Reward of a transition from the observation reached after it, the action
/// applied, and the action applied one step earlier.
pub fn reward(obs_next: &[f64], action: &[f64], prev_action: &[f64], failure: bool, cfg: &EnvConfig) -> RewardBreakdown {
    let w = &cfg.reward;
    let layout = cfg.kind.layout();
    let vel = &obs_next[layout.velocity.clone()];
    let cmd = &obs_next[layout.command.clone()];
    let (tracking_err, velocity_pen) = match cfg.kind {
        EnvKind::PointMass => {
            let speed = vel.iter().map(|v| v * v).sum::<f64>().sqrt();
            let over = (speed - cfg.speed_limit).max(0.0);
            (sq_dist(cmd, vel), over * over)
        }
        EnvKind::Pendulum => {
            let pos = &obs_next[layout.position.clone()];
            (sq_dist(cmd, pos), vel.iter().map(|v| v * v).sum())
        }
    };
    let mut r = RewardBreakdown {
        tracking: w.tracking * (-tracking_err / (TRACKING_SIGMA * TRACKING_SIGMA)).exp(),
        velocity: w.velocity * velocity_pen,
        action_rate: w.action_rate * sq_dist(prev_action, action),
        effort: w.effort * action.iter().map(|a| a * a).sum::<f64>(),
        failure: if failure { w.failure } else { 0.0 },
        total: 0.0,
    };
    r.total = r.tracking + r.velocity + r.action_rate + r.effort + r.failure;
    r
}
