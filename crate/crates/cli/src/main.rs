//! `fairagent`: prepare a corpus, train the backbone, simulate a method over
//! the test stages and compare runs.
//!
//! Exit codes: 0 success, 2 usage, 3 config, 4 data, 5 runtime,
//! 6 output exists (rerun with `--force`).

mod commands;
mod error;
mod manifest;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fairagent::experiment::Method;

use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(name = "fairagent", version, about = "Staged new-item fairness experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Experiment config (TOML). Missing keys take their defaults.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Overrides `seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load or generate the corpus and write the stage split.
    Prepare(Common),
    /// Train the backbone on the training period.
    TrainBackbone(Common),
    /// Simulate a method over every test stage.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        method: Method,
        /// Run name; defaults to the method. Used as the directory name and
        /// the `method` column of the report.
        #[arg(long)]
        label: Option<String>,
    },
    /// Compare finished runs against a baseline run.
    Report {
        /// Run directories holding `metrics.csv`.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Baseline run for δT; defaults to the first run named `backbone`,
        /// else the first run.
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Directory for the comparison files.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Prepare(c) => commands::prepare(&c),
        Command::TrainBackbone(c) => commands::train_backbone(&c),
        Command::Run { common, method, label } => commands::run(&common, method, label.as_deref()),
        Command::Report {
            runs,
            baseline,
            out,
            force,
        } => report::report(&runs, baseline.as_deref(), &out, force),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(e.exit_code())
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 3,
            CliError::Data(_) => 4,
            CliError::Runtime(_) => 5,
            CliError::OutputExists(_) => 6,
        }
    }
}
