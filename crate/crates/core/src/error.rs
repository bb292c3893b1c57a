//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid prior: {0}")]
    InvalidPrior(String),

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    /// Raised when a Bayes update sees an observation with zero likelihood
    /// under every support point.
    #[error("inconsistent observation: arm {arm} reward {reward} has zero likelihood under every support point")]
    InconsistentObservation { arm: usize, reward: u8 },

    #[error("exact horizon too large: {nodes} nodes exceed budget {budget}")]
    HorizonTooLarge { nodes: u128, budget: u64 },

    #[error("arm index {arm} out of range (K = {k})")]
    ArmOutOfRange { arm: usize, k: usize },

    #[error("cannot parse number: {0:?}")]
    BadNumber(String),

    #[error("shared draw unavailable: {0}")]
    MissingDraw(String),

    #[error("internal invariant violated: {0}")]
    Invariant(String),
}
