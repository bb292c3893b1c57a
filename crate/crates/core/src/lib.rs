//! Collaborative multi-armed bandits with persistent strategic agents.
//!
//! The crate simulates groups of agents that solve one Bernoulli bandit
//! instance together, coordinate through verifiable message rounds, and
//! decide each step whether continued collaboration beats going it alone.
//! Exact rational arithmetic backs the equilibrium checks; `f64` backs the
//! Monte Carlo benchmarks.

pub mod algos;
pub mod bandit;
pub mod caos;
pub mod deviation;
pub mod draw;
pub mod engine;
pub mod error;
pub mod memo;
pub mod oer;
pub mod scalar;
pub mod strategy;
pub mod verify;
pub mod view;

pub use error::CoreError;
pub use scalar::Scalar;

/// Exact arithmetic backend.
pub type Rational = num::BigRational;
