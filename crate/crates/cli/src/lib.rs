//! Pipeline behind the `ctxprop` binary: configuration, model fitting, proposal
//! sampling, evaluation and synthetic data, usable as a library.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod proposals_file;

pub use args::{run, Cli};
pub use config::RunConfig;
pub use error::CliError;
