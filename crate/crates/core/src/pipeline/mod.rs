//! Command-line orchestration: configuration, checkpoints and subcommands.

pub mod checkpoint;
pub mod commands;
pub mod config;

pub use checkpoint::Checkpoint;
pub use config::{ConfigArgs, RunConfig};
