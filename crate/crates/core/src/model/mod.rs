//! Attention-based MIL classifier: instance embedder, attention pooling and
//! a two-class head.

mod arch;
mod checkpoint;
mod layers;
mod mil;
mod params;

pub use arch::{ArchitectureSpec, Preset, Resolved};
pub use checkpoint::{CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use layers::{Layer, Mode, Sequential};
pub use mil::{AttentionPool, BagOutput, MilClassifier, Prediction};
pub use params::{Bound, Param, ParamId, ParamStore};

use crate::autograd::AutogradError;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("unknown architecture preset `{0}`")]
    UnknownPreset(String),
    #[error("inconsistent architecture override: {0}")]
    InconsistentOverride(String),
    #[error("instance {index} has shape {got:?}, embedder expects {expected:?}")]
    InstanceShape {
        index: usize,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("bag has no instances")]
    EmptyBag,
    #[error(transparent)]
    Autograd(#[from] AutogradError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
