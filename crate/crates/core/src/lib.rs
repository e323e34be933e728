//! Simulator for cooperative P2P power trading between nanogrid clusters,
//! with value-based and policy-gradient learners for the trading decision.

pub mod agents;
pub mod assets;
pub mod demand;
pub mod env;
pub mod error;
pub mod experiment;
pub mod nn;
pub mod market;
pub mod scheduler;
pub mod tariff;

pub use error::{Error, Result};
