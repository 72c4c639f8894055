//! Command-line pipeline over `medfaith-core`: corpus to contrastive
//! bundles, MKI vectors, loss evaluation and metrics.

pub mod commands;
pub mod config;

pub use commands::Outcome;
pub use config::{Overrides, RunConfig};
