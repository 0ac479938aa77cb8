use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use aoc_core::harness::{cmd_report, cmd_sweep, cmd_train, cmd_transfer, RunConfig};

#[derive(Parser)]
#[command(name = "aoc", version, about = "Attention option-critic experiments on four-rooms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed listed in the config.
    Train {
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Run the `[transfer]` protocol, optionally starting from a saved checkpoint.
    Transfer {
        config: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Train every cell of the `[sweep]` grid and rank the cells by attention overlap.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Aggregate a finished run directory into plot-ready CSVs under `<run>/report`.
    Report { run_dir: PathBuf },
    /// Print a config with every default filled in.
    Defaults {
        #[arg(long, default_value = "aoc-run")]
        name: String,
    },
}

fn load(path: &PathBuf, output_dir: Option<PathBuf>) -> anyhow::Result<RunConfig> {
    let mut cfg = RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(dir) = output_dir {
        cfg.output_dir = dir;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train { config, output_dir } => {
            let dir = cmd_train(&load(&config, output_dir)?)?;
            println!("{}", dir.display());
        }
        Command::Transfer {
            config,
            checkpoint,
            output_dir,
        } => {
            let dir = cmd_transfer(&load(&config, output_dir)?, checkpoint.as_deref())?;
            println!("{}", dir.display());
        }
        Command::Sweep { config, output_dir } => {
            let dir = cmd_sweep(&load(&config, output_dir)?)?;
            println!("{}", dir.display());
        }
        Command::Report { run_dir } => {
            let report = cmd_report(&run_dir)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            println!("{}", report.dir.display());
        }
        Command::Defaults { name } => {
            let cfg = RunConfig::new(name.clone(), format!("runs/{name}"), vec![0], 30_000);
            print!("{}", cfg.to_toml()?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
