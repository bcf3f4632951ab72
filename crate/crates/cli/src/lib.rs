//! Configuration files, checkpoints and the `mixda` subcommands.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod snapshot;
