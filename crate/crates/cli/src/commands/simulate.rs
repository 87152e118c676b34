use std::path::PathBuf;

use klioc::format::read_policy;
use klioc::sim::pendulum_database;
use klioc::Execution;
use serde::Serialize;

use super::{closed_loop, ClosedLoopArgs, System};
use crate::error::{CliError, CliResult};
use crate::run::Run;

#[derive(Debug, clap::Args, Serialize)]
pub struct Args {
    #[arg(long, value_enum)]
    pub system: System,
    /// TOML file overriding the system parameters.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Policy file to run in closed loop instead of generating a database.
    #[arg(long)]
    pub policy: Option<PathBuf>,
    /// Episodes in the generated database.
    #[arg(long, default_value_t = 10_000)]
    pub episodes: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[command(flatten)]
    #[serde(flatten)]
    pub closed_loop: ClosedLoopArgs,
    #[arg(long)]
    #[serde(skip)]
    pub out_dir: PathBuf,
}

/// Without `--policy`: `database.txt` of pendulum episodes from uniform
/// random states under uniform random torques. With it: `rollouts.txt` and
/// `summary.json`.
pub fn run(args: &Args, exec: Execution) -> CliResult<()> {
    let mut run = Run::create(&args.out_dir)?;
    match &args.policy {
        Some(path) => {
            let policy = run.stage("load", |r| Ok(read_policy(&r.read("policy", path)?)?))?;
            let (db, summary) =
                run.stage("closed_loop", |r| closed_loop(r, args.system, args.params.as_ref(), &args.closed_loop, args.seed, &policy))?;
            run.write("rollouts.txt", db.to_text().as_bytes())?;
            run.write_json("summary.json", &summary)?;
        }
        None => {
            if args.system == System::Robot {
                return Err(CliError::validation("database generation is available for the pendulum systems; pass --policy to simulate the robot"));
            }
            let params = args.system.pendulum_params(&mut run, args.params.as_ref())?;
            let db = run.stage("simulate", |_| Ok(pendulum_database(&params, args.episodes, args.closed_loop.steps, args.seed, exec)?))?;
            run.write("database.txt", db.to_text().as_bytes())?;
        }
    }
    run.finish("simulate", args, Some(args.seed))
}
