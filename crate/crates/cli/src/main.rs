//! Batch entry point wiring the pipeline: generate, solve, train, eval,
//! compare, verify-bounds, ablate-mask.
//!
//! Exit codes: 0 on success, 1 on validation errors (bad flags, malformed
//! inputs, dimension mismatches), 2 on numerical failures (non-convergence,
//! training divergence, a bound check that does not hold).

mod args;
mod commands;
mod output;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};
use commands::CliError;

fn init_threads(flag: Option<usize>) -> Result<(), String> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var("SOBOLEV_PROXY_THREADS") {
            Ok(s) => Some(
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| format!("SOBOLEV_PROXY_THREADS={s:?} is not an integer"))?,
            ),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err("--threads must be at least 1".to_string());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    if let Err(msg) = init_threads(cli.threads) {
        eprintln!("error: {msg}");
        return ExitCode::from(1);
    }
    let result = match &cli.command {
        Command::Generate(a) => commands::run_generate(a),
        Command::Solve(a) => commands::run_solve(a),
        Command::Train(a) => commands::run_train(a),
        Command::Eval(a) => commands::run_eval(a),
        Command::Compare(a) => commands::run_compare(a),
        Command::VerifyBounds(a) => commands::run_verify_bounds(a),
        Command::AblateMask(a) => commands::run_ablate_mask(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Numerical(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
