//! Dense networks with reverse-mode gradients, Adam and categorical heads.

mod adam;
mod categorical;
pub mod checkpoint;
mod gradcheck;
mod mlp;
mod params;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use categorical::{logsumexp, Categorical};
pub use gradcheck::{gradcheck, GradCheck};
pub use mlp::{orthogonal_matrix, Activation, Dense, Mlp, Tape};
pub use params::ParamSet;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("network has no layers")]
    EmptyNetwork,
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("unknown parameter group `{0}`")]
    UnknownParameter(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
