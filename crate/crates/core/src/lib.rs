//! Offline model-based reinforcement learning on toy control tasks: an
//! ensemble recurrent world model with epistemic uncertainty, and PPO on
//! uncertainty-penalized imagined rollouts.

// `!(x > 0.0)` also rejects NaN; index loops mirror the per-axis physics
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod datasets;
pub mod envs;
pub mod eval;
pub mod error;
pub mod mopo;
pub mod nn;
pub mod rng;
pub mod stats;
pub mod world_model;

pub use error::{Error, Result};
