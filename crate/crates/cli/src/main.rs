use clap::{Parser, Subcommand};
use mixda_cli::commands::{self, Ablation, CliError};
use mixda_cli::config::RunConfig;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Mixture-of-domain-adapters training and evaluation.
#[derive(Parser)]
#[command(name = "mixda", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Inject a domain corpus into a domain adapter.
    Stage1 {
        #[arg(long)]
        config: PathBuf,
    },
    /// Fine-tune task adapters, gate and head on top of domain adapters.
    Stage2 {
        #[arg(long)]
        config: PathBuf,
        /// Domain adapter checkpoint; repeat for several, in expert order.
        #[arg(long = "adapter")]
        adapters: Vec<PathBuf>,
    },
    /// Score a task checkpoint on labeled data.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        metric: String,
    },
    /// Run both stages with one component removed.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// no-moa, no-old or no-da.
        #[arg(long)]
        mode: String,
    },
    /// Search Stage-2 learning rates and batch sizes.
    Grid {
        #[arg(long)]
        config: PathBuf,
    },
}

fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(path)?;
    if let Ok(v) = std::env::var("MIXDA_SEED") {
        let seed = v
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("MIXDA_SEED={v:?} is not an unsigned integer")))?;
        cfg.override_seed(seed);
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Stage1 { config } => {
            let out = commands::cmd_stage1(&load_config(&config)?)?;
            println!("wrote {}", out.adapter_path.display());
        }
        Command::Stage2 { config, adapters } => {
            commands::cmd_stage2(&load_config(&config)?, &adapters)?;
        }
        Command::Eval {
            checkpoint,
            data,
            metric,
        } => {
            commands::cmd_eval(&checkpoint, &data, &metric)?;
        }
        Command::Ablate { config, mode } => {
            let mode = Ablation::parse(&mode)?;
            commands::cmd_ablate(&load_config(&config)?, mode)?;
        }
        Command::Grid { config } => {
            commands::cmd_grid(&load_config(&config)?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mixda: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
