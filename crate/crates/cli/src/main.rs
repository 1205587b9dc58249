//! `sgame`: batch front-end for the equilibrium solvers and the grid tariff
//! environment.
//!
//! Exit codes: 0 success, 1 input error, 2 non-convergence, 3 runtime failure.

mod commands;
mod manifest;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{EnergyArgs, Failure, SolveArgs};

#[derive(Debug, Parser)]
#[command(name = "sgame", version, about = "Stackelberg and Stackelberg mean-field equilibrium solvers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Stationary Stackelberg equilibrium of a game file.
    SolveSse(SolveArgs),
    /// Stationary Stackelberg mean-field equilibrium of a game file.
    SolveSmfe {
        #[command(flatten)]
        solve: SolveArgs,
        #[arg(long, default_value_t = 500)]
        max_inner: usize,
    },
    /// Tariff and storage episode on a grid file.
    Energy(EnergyArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match &cli.command {
        Command::SolveSse(a) => commands::solve_sse_cmd(a),
        Command::SolveSmfe { solve, max_inner } => commands::solve_smfe_cmd(solve, *max_inner),
        Command::Energy(a) => commands::energy_cmd(a),
    };
    let failure = match outcome {
        Ok(true) => return ExitCode::SUCCESS,
        Ok(false) => Failure::NotConverged,
        Err(f) => f,
    };
    match &failure {
        Failure::Input(m) => eprintln!("error: {m}"),
        Failure::Runtime(m) => eprintln!("runtime failure: {m}"),
        Failure::NotConverged => eprintln!("not converged; best iterate written"),
    }
    ExitCode::from(failure.exit_code())
}
