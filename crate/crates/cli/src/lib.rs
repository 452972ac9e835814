//! Command-line front end for the onto-decode summarization pipeline.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;

pub use args::{run, Cli};
pub use commands::{
    cmd_build_dcf, cmd_extract, cmd_prune, cmd_score, cmd_serve_ngram, cmd_summarize, ScoreInputs,
};
pub use config::RunConfig;
pub use error::CliError;
