//! Command-line front end: single trainings, k-fold cross-validation,
//! depth and receptive-field sweeps, and the verification suites.

pub mod commands;
pub mod config;
pub mod error;
pub mod report;

use clap::{Parser, Subcommand};

pub use config::{ExperimentConfig, Options, Precision};
pub use error::{CliError, CliResult};
pub use report::{CvReport, SweepReport};

#[derive(Debug, Parser)]
#[command(
    name = "graphcnn",
    version,
    about = "Spectral graph CNNs for graph classification"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub options: Options,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Train one model on the whole dataset.
    Train,
    /// k-fold cross-validation.
    Crossval,
    /// Cross-validation at every depth preset of the architecture.
    SweepDepth,
    /// Cross-validation at receptive fields 3, 6 and 9.
    SweepK,
    /// Oracle, gradient, permutation and spectrum self-checks.
    Verify,
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> CliResult<()> {
    let opts = cli.options.with_config_file()?;
    let dry = opts.dry_run;
    match cli.command {
        Command::Verify => commands::cmd_verify(opts.seed.unwrap_or(0), dry).map(|_| ()),
        cmd => {
            let cfg = ExperimentConfig::resolve(&opts)?;
            match cmd {
                Command::Train => commands::cmd_train(cfg, dry),
                Command::Crossval => commands::cmd_crossval(cfg, dry).map(|_| ()),
                Command::SweepDepth => commands::cmd_sweep_depth(cfg, dry).map(|_| ()),
                Command::SweepK => commands::cmd_sweep_k(cfg, dry).map(|_| ()),
                Command::Verify => unreachable!(),
            }
        }
    }
}
