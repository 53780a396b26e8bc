//! Command-line front end: gain allocation, certification, simulation,
//! training and data export for networked REN controllers.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::Options;
use error::{CliError, EXIT_OK};

/// Environment variable holding the worker thread count.
const THREADS_ENV: &str = "NETREN_THREADS";

#[derive(Debug, Parser)]
#[command(name = "netren", version, about = "Distributed controllers with a network-level L2 gain certificate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Allocate per-agent gains and check the network certificate.
    Gains {
        #[command(flatten)]
        common: Common,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Print the certificate report; exits 1 if it is infeasible.
    Certify {
        #[command(flatten)]
        common: Common,
    },
    /// Simulate the closed loop once and write the trajectory and a summary.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Use zero disturbance (including the initial state).
        #[arg(long)]
        zero_noise: bool,
        /// Override the horizon T.
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Train the controller; writes checkpoints, histories and the final certificate.
    Train {
        #[command(flatten)]
        common: Common,
        /// Write a checkpoint every k epochs.
        #[arg(long, default_value_t = 10)]
        checkpoint_every: usize,
    },
    /// Write plot-ready CSV/JSON files.
    Export {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// Config file, or the name of a bundled config.
    #[arg(long)]
    config: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Checkpoint to evaluate or resume from.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Override the number of epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Check the certificate at every epoch.
    #[arg(long)]
    debug_certify: bool,
}

impl Common {
    fn options(&self) -> Options {
        Options {
            seed: self.seed,
            out: self.out.clone(),
            checkpoint: self.checkpoint.clone(),
            epochs: self.epochs,
            debug_certify: self.debug_certify,
            checkpoint_every: 10,
            ..Options::default()
        }
    }
}

fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .map_err(|_| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got '{v}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot configure thread pool: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    match cli.command {
        Command::Gains { common, json } => {
            let cfg = config::load(&common.config)?;
            commands::gains(&cfg, &Options { json, ..common.options() }).map(drop)
        }
        Command::Certify { common } => {
            let cfg = config::load(&common.config)?;
            commands::certify_cmd(&cfg, &common.options()).map(drop)
        }
        Command::Simulate {
            common,
            zero_noise,
            horizon,
        } => {
            let cfg = config::load(&common.config)?;
            let opts = Options {
                zero_noise,
                horizon,
                ..common.options()
            };
            commands::simulate(&cfg, &opts).map(drop)
        }
        Command::Train {
            common,
            checkpoint_every,
        } => {
            let cfg = config::load(&common.config)?;
            let opts = Options {
                checkpoint_every,
                ..common.options()
            };
            commands::train_cmd(&cfg, &opts).map(drop)
        }
        Command::Export { common } => {
            let cfg = config::load(&common.config)?;
            commands::export(&cfg, &common.options()).map(drop)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::from(EXIT_OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            println!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
