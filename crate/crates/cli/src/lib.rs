//! Configuration, file formats and subcommands of the `sideband` tool.

pub mod commands;
pub mod config;
pub mod io;
pub mod manifest;

pub use commands::{apply_overrides, run, Overrides};
pub use config::RunConfig;
pub use manifest::Manifest;
