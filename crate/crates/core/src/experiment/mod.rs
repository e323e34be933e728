//! Experiment plumbing: configuration, training and evaluation runs,
//! baseline comparison and report emission.

mod artifacts;
mod config;
mod report;
mod run;

pub use artifacts::*;
pub use config::*;
pub use report::*;
pub use run::*;
