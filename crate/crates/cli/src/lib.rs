//! Scenario-driven front end for the `equalizer` library: JSON config in,
//! text report and CSV files out.

pub mod commands;
pub mod config;
mod error;
pub mod table;

use std::path::Path;

pub use commands::{Outcome, Overrides, Status};
pub use config::{parse_config, ConfigError, ScenarioConfig};
pub use error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Analyze,
    Simulate,
    Equalize,
    SweepCs,
}

pub fn run(command: Command, config: &ScenarioConfig, overrides: &Overrides) -> Result<Outcome, CliError> {
    match command {
        Command::Analyze => commands::analyze(config),
        Command::Simulate => commands::simulate(config, overrides),
        Command::Equalize => commands::equalize(config, overrides),
        Command::SweepCs => commands::sweep_cs(config),
    }
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_owned(),
        source,
    })?;
    Ok(parse_config(&text)?)
}

/// Writes every output file into `dir`, creating it if needed.
pub fn write_outputs(outcome: &Outcome, dir: &Path) -> Result<(), CliError> {
    let io = |path: &Path| {
        let path = path.to_owned();
        move |source| CliError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    for f in &outcome.files {
        let path = dir.join(&f.name);
        std::fs::write(&path, f.table.to_csv()).map_err(io(&path))?;
    }
    Ok(())
}
