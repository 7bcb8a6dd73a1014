//! Differentiable function approximators with hand-written reverse-mode
//! gradients, Kaiming initialization, Adam, and a binary checkpoint format.

pub mod checkpoint;
pub mod gradcheck;
pub mod init;
pub mod layers;
pub mod network;
pub mod optim;
pub mod params;

use serde::{Deserialize, Serialize};

pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointEntry, CHECKPOINT_MAGIC};
pub use layers::Batch;
pub use network::{CnnSpec, ForwardOutput, HeadKind, InputGrads, LstmCarry, LstmSpec, Network, NetworkSpec, SilKind};
pub use optim::{adam_step, clip_grad_norm, OptimizerConfig, StepStats, WeightDecayMode};
pub use params::{Param, ParamId, ParameterSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Batch statistics and dropout active.
    Train,
    /// Running statistics, no dropout, no side effects.
    Eval,
}
