use std::path::PathBuf;

use fairagent::experiment::ExperimentError;
use thiserror::Error;

/// Failure classes, each with its own exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0:#}")]
    Config(anyhow::Error),
    #[error("data: {0:#}")]
    Data(anyhow::Error),
    #[error("{0:#}")]
    Runtime(anyhow::Error),
    #[error("{} already exists; pass --force to overwrite", .0.display())]
    OutputExists(PathBuf),
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Config(_) => CliError::Config(e.into()),
            ExperimentError::Corpus(_) => CliError::Data(e.into()),
            _ => CliError::Runtime(e.into()),
        }
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

pub trait Classify<T> {
    fn config(self, what: impl FnOnce() -> String) -> CliResult<T>;
    fn data(self, what: impl FnOnce() -> String) -> CliResult<T>;
    fn runtime(self, what: impl FnOnce() -> String) -> CliResult<T>;
}

impl<T, E> Classify<T> for Result<T, E>
where
    E: Into<anyhow::Error>,
{
    fn config(self, what: impl FnOnce() -> String) -> CliResult<T> {
        self.map_err(|e| CliError::Config(e.into().context(what())))
    }

    fn data(self, what: impl FnOnce() -> String) -> CliResult<T> {
        self.map_err(|e| CliError::Data(e.into().context(what())))
    }

    fn runtime(self, what: impl FnOnce() -> String) -> CliResult<T> {
        self.map_err(|e| CliError::Runtime(e.into().context(what())))
    }
}
