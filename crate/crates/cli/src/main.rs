//! `liqgame`: batch front end for the liquidation-game solvers.
//!
//! Exit status: 0 on success, 2 for configuration errors, 3 for numerical failures.

mod commands;
mod config;
mod output;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use liqgame::convergence::ConvergenceError;
use liqgame::equilibria::EquilibriumError;
use liqgame::hawkes::HawkesError;
use liqgame::matops::MatError;
use liqgame::verify::VerifyError;

use config::{ConfigError, Flags, Settings};

#[derive(Parser, Debug)]
#[command(name = "liqgame", version, about = "Equilibria of liquidation games with self-exciting order flow")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Mean-field game: mean path and representative player
    #[command(allow_negative_numbers = true)]
    Mfg(Flags),
    /// Single player with child-order flow
    #[command(allow_negative_numbers = true)]
    Single(Flags),
    /// Two-player game
    #[command(allow_negative_numbers = true)]
    Two(Flags),
    /// N-player game
    #[command(allow_negative_numbers = true)]
    Nplayer(Flags),
    /// Simulate one path of two-sided Hawkes order flow
    #[command(allow_negative_numbers = true)]
    Hawkes(Flags),
    /// Penalisation sweep over terminal weights n
    #[command(name = "sweep-n", allow_negative_numbers = true)]
    SweepN(Flags),
    /// N-player to mean-field convergence experiment
    #[command(allow_negative_numbers = true)]
    Converge(Flags),
    /// Random round-trip deviation test of an equilibrium
    #[command(allow_negative_numbers = true)]
    Verify(Flags),
    /// Weak-interaction condition report
    #[command(allow_negative_numbers = true)]
    Check(Flags),
    /// Series behind the three figure panels, written into a directory
    #[command(allow_negative_numbers = true)]
    Figures(Flags),
}

fn run(command: Command) -> anyhow::Result<String> {
    let (name, flags, f): (&str, Flags, fn(&Settings) -> anyhow::Result<commands::Outcome>) = match command {
        Command::Mfg(f) => ("mfg", f, commands::mfg),
        Command::Single(f) => ("single", f, commands::single),
        Command::Two(f) => ("two", f, commands::two),
        Command::Nplayer(f) => ("nplayer", f, commands::nplayer),
        Command::Hawkes(f) => ("hawkes", f, commands::hawkes),
        Command::SweepN(f) => ("sweep-n", f, commands::sweep_n),
        Command::Converge(f) => ("converge", f, commands::converge),
        Command::Verify(f) => ("verify", f, commands::verify),
        Command::Check(f) => ("check", f, commands::check),
        Command::Figures(f) => ("figures", f, commands::figures),
    };
    let settings = Settings::resolve(name, flags)?;
    let outcome = f(&settings)?;
    for (path, table) in &outcome.tables {
        if let Err(e) = table.emit(path.as_deref()) {
            // a closed downstream pipe is not a failure of the run
            let closed = e.chain().any(|c| {
                c.downcast_ref::<std::io::Error>().is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe)
            }) || e.chain().any(|c| {
                c.downcast_ref::<csv::Error>().is_some_and(
                    |ce| matches!(ce.kind(), csv::ErrorKind::Io(io) if io.kind() == std::io::ErrorKind::BrokenPipe),
                )
            });
            if closed {
                break;
            }
            return Err(config::config_err(format!("output: {e:#}")));
        }
    }
    Ok(outcome.summary)
}

/// Short name of the numerical error, e.g. `EquilibriumError::Divergence`.
fn error_class(e: &anyhow::Error) -> String {
    fn eq(e: &EquilibriumError) -> &'static str {
        match e {
            EquilibriumError::Model(_) => "EquilibriumError::Model",
            EquilibriumError::SingularBoundary { .. } => "EquilibriumError::SingularBoundary",
            EquilibriumError::Matrix(_) => "EquilibriumError::Matrix",
            EquilibriumError::Divergence { .. } => "EquilibriumError::Divergence",
            EquilibriumError::Internal(_) => "EquilibriumError::Internal",
        }
    }
    for cause in e.chain() {
        if let Some(x) = cause.downcast_ref::<EquilibriumError>() {
            return eq(x).into();
        }
        if let Some(x) = cause.downcast_ref::<ConvergenceError>() {
            return match x {
                ConvergenceError::Equilibrium(inner) => eq(inner).into(),
                ConvergenceError::Invalid(_) => "ConvergenceError::Invalid".into(),
            };
        }
        if let Some(x) = cause.downcast_ref::<VerifyError>() {
            let v = match x {
                VerifyError::Model(_) => "Model",
                VerifyError::Matrix(_) => "Matrix",
                VerifyError::Shape(_) => "Shape",
                VerifyError::TerminalMismatch { .. } => "TerminalMismatch",
            };
            return format!("VerifyError::{v}");
        }
        if let Some(x) = cause.downcast_ref::<HawkesError>() {
            let v = match x {
                HawkesError::InvalidParams(_) => "InvalidParams",
                HawkesError::IntensityOverflow { .. } => "IntensityOverflow",
                HawkesError::RateShape { .. } => "RateShape",
                HawkesError::Matrix(_) => "Matrix",
            };
            return format!("HawkesError::{v}");
        }
        if cause.downcast_ref::<MatError>().is_some() {
            return "MatError".into();
        }
    }
    "NumericError".into()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(summary) => {
            eprintln!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) if e.downcast_ref::<ConfigError>().is_some() => {
            eprintln!("config error: {e:#}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("numeric failure [{}]: {e:#}", error_class(&e));
            ExitCode::from(3)
        }
    }
}
