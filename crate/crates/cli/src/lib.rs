//! Command-line orchestration of the pipeline stages.
//!
//! `retrieve`, `build-prefsets`, `train` and `eval` each read one TOML
//! [`config::RunConfig`] and write their artifacts under its output
//! directory. Artifacts carry a header with a config hash chained through
//! the stages (see [`artifacts`]), and a stage rejects inputs produced
//! under different settings.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;

pub use error::{CliError, EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION};
