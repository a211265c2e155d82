//! Manifest-driven orchestration of the `cgro-core` experiments.
//!
//! A run is described by one JSON [`manifest::ExperimentManifest`]; each
//! subcommand reads it, writes its artifacts under `output_dir` and maps
//! failures to stable exit codes (see [`error::CliError::exit_code`]).

pub mod commands;
pub mod error;
pub mod manifest;

pub use error::{CliError, Result};
pub use manifest::ExperimentManifest;

/// Environment variable read when `--threads` is absent.
pub const THREADS_ENV: &str = "CGRO_LAB_THREADS";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    GenData,
    Train,
    Flatness,
    Construct,
    Report,
}

/// Runs one command; the returned text is meant for stdout.
pub fn run(command: Command, manifest: &ExperimentManifest) -> Result<String> {
    match command {
        Command::GenData => commands::gen_data(manifest),
        Command::Train => commands::train_cmd(manifest),
        Command::Flatness => commands::flatness_cmd(manifest),
        Command::Construct => commands::construct_cmd(manifest),
        Command::Report => commands::report_cmd(manifest),
    }
}

/// Worker count from the flag, else from [`THREADS_ENV`], else 0 (rayon's default).
pub fn resolve_threads(flag: Option<usize>) -> Result<usize> {
    if let Some(n) = flag {
        return Ok(n);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| {
            CliError::Lab(cgro_core::LabError::config(
                THREADS_ENV,
                format!("not a thread count: {v:?}"),
            ))
        }),
        Err(_) => Ok(0),
    }
}
