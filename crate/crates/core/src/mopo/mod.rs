//! Uncertainty-penalized offline policy optimization: PPO on imagined
//! rollouts whose rewards are reduced by `λ` times the world model's
//! epistemic uncertainty.

mod buffer;
mod imagine;
mod online;
mod policy;
mod ppo;
mod train;

pub use buffer::{gae, normalize_advantages, penalize, RolloutBuffer, StepRecord};
pub use imagine::imagine;
pub use online::{train_online, OnlineTraining};
pub use policy::{NetConfig, ObsScale, PolicyNet, ValueNet, POLICY_LOG_STD_MAX, POLICY_LOG_STD_MIN};
pub use ppo::{adapt_lr, gaussian_kl, ppo_update, ActorCritic, PpoConfig, PpoStats};
pub use train::{curves_csv, init_actor_critic, train_policy, CurveRow, PolicyTraining, CURVE_COLUMNS};
