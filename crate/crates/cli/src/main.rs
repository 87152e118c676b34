//! `klioc`: file-based pipeline for KL-regularized forward and inverse
//! control. See the repository README for the file formats and bundles.

mod bundle;
mod commands;
mod error;
mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use klioc::Execution;

use commands::{estimate, eval, foc, ioc_fit, simulate};
use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "klioc", version, about = "KL-regularized forward and inverse control on tabular and Gaussian-linear models")]
struct Cli {
    /// Run every data-parallel loop on the calling thread. Results are
    /// identical either way.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a database of simulated episodes, or closed-loop rollouts of
    /// a policy with `--policy`.
    Simulate(simulate::Args),
    /// Estimate a stationary transition kernel from a database by counting.
    Estimate(estimate::Args),
    /// Solve the forward problem for a bundle, or the closed form of a
    /// Gaussian-linear model with `--gaussian`.
    Foc(foc::Args),
    /// Fit linear cost weights to observed state/action pairs.
    IocFit(ioc_fit::Args),
    /// Compare an estimated cost with the true one and optionally score a
    /// policy in closed loop.
    Eval(eval::Args),
}

impl Command {
    fn out_dir(&self) -> &Path {
        match self {
            Command::Simulate(a) => &a.out_dir,
            Command::Estimate(a) => &a.out_dir,
            Command::Foc(a) => &a.out_dir,
            Command::IocFit(a) => &a.out_dir,
            Command::Eval(a) => &a.out_dir,
        }
    }
}

fn report(err: &CliError, out_dir: Option<&Path>) -> ExitCode {
    let record = err.record();
    eprintln!("{record}");
    if let Some(dir) = out_dir {
        if std::fs::create_dir_all(dir).is_ok() {
            let _ = std::fs::write(dir.join(run::ERROR), format!("{:#}\n", record));
        }
    }
    ExitCode::from(err.kind.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return report(&CliError::validation(e.to_string().trim_end()), None),
    };
    let exec = if cli.sequential { Execution::Sequential } else { Execution::default() };
    let out_dir: PathBuf = cli.command.out_dir().to_path_buf();
    let result = match cli.command {
        Command::Simulate(a) => simulate::run(&a, exec),
        Command::Estimate(a) => estimate::run(&a, exec),
        Command::Foc(a) => foc::run(&a, exec),
        Command::IocFit(a) => ioc_fit::run(&a, exec),
        Command::Eval(a) => eval::run(&a, exec),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&e, Some(&out_dir)),
    }
}
