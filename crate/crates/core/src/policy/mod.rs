//! Pursuit policy: network, reward, rollouts and training.

pub mod action;
pub mod beacon;
pub mod checkpoint;
pub mod env;
pub mod gradcheck;
pub mod network;
pub mod reward;
pub mod tape;
pub mod train;

pub use action::ActionSpace;
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, policy_grad_check, Evaluation, GradCheckConfig, GradCheckReport};
pub use network::{evaluate, sample_action, NetworkConfig, Observation, PolicyParams, Preset};
pub use reward::{reward, reward_terms, RewardConfig, RewardContext, RewardTerms};
pub use tape::{Tape, Tensor, Var};
pub use train::{train, write_curve_csv, IterationStats, OptimizerConfig, RmsProp, TrainConfig};

#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error("checkpoint dimension mismatch for tensor `{name}`: file has {found:?}, configuration expects {expected:?}")]
    Dimension {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error(transparent)]
    World(#[from] crate::world::WorldError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
