//! `dpgeom` — accounting queries, noise calibration, amplification-curve
//! sweeps, basis generation, and simulation runs on top of the library.
//!
//! Every command writes its fully-resolved configuration next to its outputs
//! so a run can be reproduced from the output directory alone. Exit codes:
//! 0 success, 2 validation error, 3 infeasible calibration, 4 numeric
//! failure.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use dpgeom::Error;

#[derive(Parser)]
#[command(
    name = "dpgeom",
    version,
    about = "Privacy accounting and noise calibration"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the RDP curve of a mechanism, compose it T-fold and convert
    /// to (eps, delta).
    Epsilon(commands::EpsilonArgs),
    /// Sweep sigma and emit log(eps(alpha)) for input-wise, coordinate-wise
    /// and twice sampling at matched rates.
    AmplifyCurve(commands::AmplifyArgs),
    /// Calibrate two mechanisms to the same target and report the
    /// total-noise-variance ratio.
    CompareVariance(commands::CompareArgs),
    /// Approximate principal subspaces from a sample CSV and write the basis
    /// plus per-block statistics.
    Basis(commands::BasisArgs),
    /// Run the hybrid clipping + twice sampling pipeline and write the
    /// release with its accounting sidecar.
    Simulate(commands::SimulateArgs),
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Infeasible(_) => 3,
        Error::Numeric(_) => 4,
        _ => 2,
    }
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Epsilon(args) => commands::run_epsilon(args),
        Command::AmplifyCurve(args) => commands::run_amplify(args),
        Command::CompareVariance(args) => commands::run_compare(args),
        Command::Basis(args) => commands::run_basis(args),
        Command::Simulate(args) => commands::run_simulate(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err}");
        std::process::exit(exit_code(&err));
    }
}
