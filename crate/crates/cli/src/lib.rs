//! Command-line pipeline around `clfkit`: run configuration, checkpoints,
//! result files and the experiment sweep.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod sweep;

pub use checkpoint::Checkpoint;
pub use config::RunConfig;
pub use error::CliError;
