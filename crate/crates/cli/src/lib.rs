//! Library surface of the command-line front end: run configuration,
//! manifests, and the subcommand implementations.

pub mod commands;
pub mod config;
pub mod manifest;

pub use config::RunConfig;
