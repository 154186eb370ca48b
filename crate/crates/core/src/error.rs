//! Errors shared by the trainable models.

use thiserror::Error;

use crate::events::{Side, UserId};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Divergence { epoch: usize, loss: f64 },
    #[error("no judge on side {side:?} has >=2 likes and >=1 dislike")]
    InsufficientJudges { side: Side },
    #[error("no image available for user {0}")]
    MissingImage(UserId),
    #[error("no embedding available for user {0}")]
    MissingEmbedding(UserId),
    #[error("candidate pool is empty")]
    EmptyPool,
    #[error(transparent)]
    Checkpoint(#[from] crate::checkpoint::CheckpointError),
}
