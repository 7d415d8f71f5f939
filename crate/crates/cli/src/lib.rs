//! Command-line verbs and the HTTP service for memorisation maps.

pub mod cli;
pub mod commands;
pub mod config;
pub mod service;
pub mod tsv;

pub use cli::Cli;
pub use commands::run;
