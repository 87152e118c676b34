use std::path::PathBuf;

use klioc::format::{read_cost, read_policy};
use klioc::ioc::cost_discrepancy;
use klioc::{Execution, ExtendedReal};
use serde::Serialize;

use super::{closed_loop, ClosedLoopArgs, ClosedLoopSummary, System};
use crate::error::{CliError, CliResult};
use crate::run::Run;

#[derive(Debug, clap::Args, Serialize)]
pub struct Args {
    #[arg(long)]
    pub true_cost: PathBuf,
    #[arg(long)]
    pub estimated_cost: PathBuf,
    /// Step of the cost tables to compare.
    #[arg(long, default_value_t = 1)]
    pub step: usize,
    /// Policy to score in closed loop.
    #[arg(long, requires = "system")]
    pub policy: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub system: Option<System>,
    /// TOML file overriding the system parameters.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[command(flatten)]
    #[serde(flatten)]
    pub closed_loop: ClosedLoopArgs,
    #[arg(long)]
    #[serde(skip)]
    pub out_dir: PathBuf,
}

#[derive(Serialize)]
struct Evaluation {
    step: usize,
    discrepancy: ExtendedReal,
    closed_loop: Option<ClosedLoopSummary>,
}

/// Writes `eval.json`.
pub fn run(args: &Args, _exec: Execution) -> CliResult<()> {
    let mut run = Run::create(&args.out_dir)?;
    let truth = read_cost(&run.read("true_cost", &args.true_cost)?)?;
    let estimate = read_cost(&run.read("estimated_cost", &args.estimated_cost)?)?;
    if truth.states() != estimate.states() {
        return Err(CliError::validation("the two cost tables use different grids"));
    }
    if args.step == 0 || !truth.covers(args.step) || !estimate.covers(args.step) {
        return Err(CliError::validation(format!("step {} is not covered by both cost tables", args.step)));
    }
    let discrepancy = run.stage("discrepancy", |_| Ok(cost_discrepancy(truth.at(args.step), estimate.at(args.step))?))?;
    let closed_loop = match (&args.policy, args.system) {
        (Some(path), Some(system)) => {
            let policy = read_policy(&run.read("policy", path)?)?;
            let (_, summary) = run.stage("closed_loop", |r| closed_loop(r, system, args.params.as_ref(), &args.closed_loop, args.seed, &policy))?;
            Some(summary)
        }
        _ => None,
    };
    run.write_json("eval.json", &Evaluation { step: args.step, discrepancy, closed_loop })?;
    run.finish("eval", args, args.policy.as_ref().map(|_| args.seed))
}
