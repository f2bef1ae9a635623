use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use acmr_cli::{
    commands, config::RunConfig, format_gradcheck, metrics_json, CliError, EXIT_CONFIG,
};

/// Cross-modal VAE alignment pipeline for generalized zero-shot
/// classification.
#[derive(Parser, Debug)]
#[command(name = "acmr", version, about)]
struct Cli {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Overrides the training seed from the config.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Overrides the output directory from the config.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic dataset files (features, attributes, labels,
    /// split).
    Synth,
    /// Train the aligned cross-modal model and the final classifier, then
    /// evaluate.
    Train,
    /// Evaluate an existing checkpoint; no training.
    Eval {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
    },
    /// Check analytic gradients of every loss component against central
    /// finite differences.
    Gradcheck,
    /// Export latent posterior means for external visualization.
    #[command(name = "export-embeddings")]
    ExportEmbeddings {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(cli.config.as_deref(), cli.seed, cli.out.as_deref())?;
    match cli.command {
        Command::Synth => {
            let files = commands::run_synth(&cfg)?;
            for f in files {
                println!("{}", f.display());
            }
        }
        Command::Train => {
            let outputs = commands::run_train(&cfg)?;
            println!("{}", metrics_json(&outputs.metrics)?);
        }
        Command::Eval { checkpoint } => {
            let metrics = commands::run_eval(&cfg, &checkpoint)?;
            println!("{}", metrics_json(&metrics)?);
        }
        Command::Gradcheck => {
            let report = commands::run_gradcheck(&cfg)?;
            print!("{}", format_gradcheck(&report));
            if !report.passed {
                return Err(CliError::GradcheckFailed);
            }
        }
        Command::ExportEmbeddings { checkpoint } => {
            let path = commands::run_export(&cfg, &checkpoint)?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints help/version to stdout with success; real usage
            // errors map to the config exit code.
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_CONFIG as u8)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Fatal errors always reach stderr; ACMR_LOG only gates
            // progress output.
            eprintln!("acmr: error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
