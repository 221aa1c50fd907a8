use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use equalizer_cli::{load_config, run, write_outputs, Command, Overrides};

#[derive(Parser)]
#[command(name = "equalizer", version, about = "Multi-cell battery equalizer analysis and simulation")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    /// Scenario config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Directory for CSV output.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,

    /// Switching periods to simulate, or profile cycles for `equalize`.
    #[arg(long, global = true)]
    cycles: Option<usize>,

    #[arg(long, global = true)]
    steps_per_period: Option<usize>,

    /// Run the randomized verification suite with this seed (`simulate`).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Suppress the text report.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Closed-form currents, powers and switching bounds.
    Analyze,
    /// Time-domain simulation of the switched network.
    Simulate,
    /// Closed-loop equalization or cycling run.
    Equalize,
    /// Snubber capacitance sweep.
    SweepCs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let command = match cli.command {
        Cmd::Analyze => Command::Analyze,
        Cmd::Simulate => Command::Simulate,
        Cmd::Equalize => Command::Equalize,
        Cmd::SweepCs => Command::SweepCs,
    };
    let Some(path) = cli.config.as_deref() else {
        eprintln!("error: --config <path> is required");
        return ExitCode::from(2);
    };
    let overrides = Overrides {
        cycles: cli.cycles,
        steps_per_period: cli.steps_per_period,
        seed: cli.seed,
    };
    let result = load_config(path)
        .and_then(|config| run(command, &config, &overrides))
        .and_then(|outcome| write_outputs(&outcome, &cli.out).map(|_| outcome));
    match result {
        Ok(outcome) => {
            if !cli.quiet {
                print!("{}", outcome.report);
            }
            ExitCode::from(outcome.status.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
