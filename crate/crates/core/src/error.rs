use thiserror::Error;

use crate::encoder::EncoderError;
use crate::explanation::{TagError, Verdict};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Tag(#[from] TagError),
    #[error("non-finite scores in {0}")]
    NonFinite(String),
    #[error("training diverged at epoch {epoch} on example {example}: loss {loss}")]
    Diverged { epoch: usize, example: String, loss: f64 },
    #[error("example {0} has no gold explanation")]
    MissingGold(String),
    #[error("gold explanation of {id} is invalid: {verdict}")]
    InvalidGold { id: String, verdict: Verdict },
    #[error("training split is empty")]
    EmptySplit,
    #[error("{0}")]
    Config(String),
}
