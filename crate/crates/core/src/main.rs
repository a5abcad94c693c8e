//! `lsbo` command-line interface: run experiments, aggregate traces, render
//! plots, and build performance/data profiles.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lsbo::harness;

#[derive(Parser)]
#[command(
    name = "lsbo",
    version,
    about = "Latent-space Bayesian optimization experiment runner"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every `[run]` section of a config and write traces + manifest.
    Run {
        /// Experiment config file.
        config: PathBuf,
        /// Override the config's output directory.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Pre-train and cache the VAE checkpoints a config needs.
    TrainVae {
        /// Experiment config file.
        config: PathBuf,
    },
    /// Aggregate per-seed traces into mean/std curves.
    Aggregate {
        /// Results directory produced by `run`.
        dir: PathBuf,
    },
    /// Render convergence plots (one SVG per objective).
    Plot {
        /// Results directory produced by `run`.
        dir: PathBuf,
        /// Log-scale the y axis.
        #[arg(long)]
        log_y: bool,
    },
    /// Emit performance/data profiles and a solved-percentage table.
    Profile {
        /// Results directory produced by `run`.
        dir: PathBuf,
        /// Accuracy levels; repeat for several (e.g. --tau 0.1 --tau 0.001).
        #[arg(long = "tau", required = true)]
        taus: Vec<f64>,
        /// Budget in groups of n_p+1 evaluations for the data profile.
        #[arg(long = "ng", default_value_t = 50)]
        n_groups: usize,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version requests are successes; bad usage is a config error.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), harness::HarnessError> {
    match cli.command {
        Command::Run { config, output_dir } => {
            let dir = harness::run_experiment(&config, output_dir.as_deref())?;
            println!("results written to {}", dir.display());
        }
        Command::TrainVae { config } => {
            let n = harness::train_vaes(&config)?;
            println!("{n} VAE checkpoint(s) ready");
        }
        Command::Aggregate { dir } => {
            for path in harness::aggregate_dir(&dir)? {
                println!("{}", path.display());
            }
        }
        Command::Plot { dir, log_y } => {
            for path in harness::plot_dir(&dir, log_y)? {
                println!("{}", path.display());
            }
        }
        Command::Profile { dir, taus, n_groups } => {
            for path in harness::profile_report(&dir, &taus, n_groups)? {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}
