//! Command-line front end and HTTP service for relmem.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod server;
pub mod store;

pub use cli::Cli;
pub use commands::run;
pub use error::CliError;
