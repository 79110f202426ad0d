//! Configuration, orchestration and reporting for the `nlad` command line tool.

pub mod acceptance;
pub mod app;
pub mod commands;
pub mod config;
pub mod error;
pub mod store;

pub use config::RunConfig;
pub use error::CliError;
