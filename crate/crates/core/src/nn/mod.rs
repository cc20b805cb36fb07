//! Minimal reverse-mode differentiation, layers, losses and optimizer.

pub mod adam;
pub mod checkpoint;
pub mod layers;
pub mod loss;
pub mod tape;
pub mod tensor;

pub use adam::{clip_global_norm, AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, CheckpointMeta, TensorReader, CHECKPOINT_MAGIC};
pub use layers::{collect_grads, Activation, Gru, GruLayer, Linear, Mlp, Module};
pub use loss::{bce_with_logits, gaussian_nll, gaussian_nll_rows, squared_error_rows, HALF_LN_2PI, LOG_STD_MAX, LOG_STD_MIN};
pub use tape::{Backend, Eager, Grads, Tape, Unary, Var};
pub use tensor::Tensor;
