use cgro_lab::manifest::parse_override;
use cgro_lab::{resolve_threads, run, CliError, Command, ExperimentManifest};
use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

/// Adversarial-training laboratory on patch-structured synthetic data.
#[derive(Parser)]
#[command(name = "cgro-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample the training set and print its SHA-256.
    GenData(Args),
    /// Train, checkpoint and evaluate.
    Train(Args),
    /// Probe checkpoints and write the flatness ledger.
    Flatness(Args),
    /// Build and verify the memorization ReLU network.
    Construct(Args),
    /// Consolidate all outputs into one summary.
    Report(Args),
}

#[derive(clap::Args)]
struct Args {
    /// Experiment manifest (JSON).
    manifest: PathBuf,
    /// Worker threads; defaults to CGRO_LAB_THREADS, then to all cores.
    #[arg(long)]
    threads: Option<usize>,
    /// Field overrides such as --run_config.eta=0.5.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    overrides: Vec<String>,
}

fn execute(command: Command, args: Args) -> Result<String, CliError> {
    let overrides = args
        .overrides
        .iter()
        .map(|o| parse_override(o))
        .collect::<Result<Vec<_>, _>>()?;
    let manifest = ExperimentManifest::load(&args.manifest, &overrides)?;
    let threads = resolve_threads(args.threads)?;
    cgro_core::with_threads(threads, || run(command, &manifest))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Cmd::GenData(a) => (Command::GenData, a),
        Cmd::Train(a) => (Command::Train, a),
        Cmd::Flatness(a) => (Command::Flatness, a),
        Cmd::Construct(a) => (Command::Construct, a),
        Cmd::Report(a) => (Command::Report, a),
    };
    match execute(command, args) {
        Ok(text) => {
            println!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
