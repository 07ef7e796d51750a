//! Command-line front end for the anomaly-detection library: run configs,
//! the checkpoint container, and the six subcommand implementations.

pub mod checkpoint;
pub mod commands;
pub mod config;
