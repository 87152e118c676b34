use std::path::PathBuf;
use std::sync::Arc;

use clap::ValueEnum;
use klioc::estimation::{histogram_estimate, Database, HistogramOptions, UnvisitedRows};
use klioc::format::write_transition;
use klioc::{Axis, Execution, GridSpace};
use serde::Serialize;

use super::System;
use crate::error::{CliError, CliResult};
use crate::run::Run;

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Unvisited {
    /// Uniform over every state cell.
    Uniform,
    /// Stay in the current cell.
    Stay,
}

fn parse_axis(text: &str) -> Result<Axis, String> {
    let parts: Vec<&str> = text.split(':').collect();
    let [lo, hi, bins] = parts[..] else {
        return Err(format!("expected `lower:upper:bins`, got `{text}`"));
    };
    let lo: f64 = lo.parse().map_err(|_| format!("bad lower bound `{lo}`"))?;
    let hi: f64 = hi.parse().map_err(|_| format!("bad upper bound `{hi}`"))?;
    let bins: usize = bins.parse().map_err(|_| format!("bad bin count `{bins}`"))?;
    Axis::new(lo, hi, bins).map_err(|e| e.to_string())
}

#[derive(Debug, clap::Args, Serialize)]
pub struct Args {
    #[arg(long)]
    pub database: PathBuf,
    /// Take the grids from a system's parameters.
    #[arg(long, value_enum, conflicts_with_all = ["state_axis", "action_axis"])]
    pub system: Option<System>,
    /// TOML file overriding the system parameters.
    #[arg(long, requires = "system")]
    pub params: Option<PathBuf>,
    /// State axis `lower:upper:bins`; repeat once per dimension.
    #[arg(long = "state-axis", value_parser = parse_axis)]
    pub state_axis: Vec<Axis>,
    /// Action axis `lower:upper:bins`; repeat once per dimension.
    #[arg(long = "action-axis", value_parser = parse_axis)]
    pub action_axis: Vec<Axis>,
    /// Pseudo-count added to every cell of each row.
    #[arg(long, default_value_t = 0.0)]
    pub smoothing: f64,
    /// Row used for state/action pairs never seen in the data.
    #[arg(long, value_enum, default_value_t = Unvisited::Uniform)]
    pub unvisited: Unvisited,
    #[arg(long)]
    #[serde(skip)]
    pub out_dir: PathBuf,
}

fn grids(run: &mut Run, args: &Args) -> CliResult<(Arc<GridSpace>, Arc<GridSpace>)> {
    match args.system {
        Some(System::Robot) => {
            let p = System::Robot.robot_params(run, args.params.as_ref())?;
            Ok((p.state_grid()?, p.action_grid(p.action_bins)?))
        }
        Some(s) => {
            let p = s.pendulum_params(run, args.params.as_ref())?;
            Ok((p.state_grid()?, p.action_grid()?))
        }
        None => {
            if args.state_axis.is_empty() || args.action_axis.is_empty() {
                return Err(CliError::validation("give --system or at least one --state-axis and --action-axis"));
            }
            Ok((Arc::new(GridSpace::new(args.state_axis.clone())?), Arc::new(GridSpace::new(args.action_axis.clone())?)))
        }
    }
}

/// Writes `kernel.txt`.
pub fn run(args: &Args, exec: Execution) -> CliResult<()> {
    let mut run = Run::create(&args.out_dir)?;
    let (states, actions) = grids(&mut run, args)?;
    let db = run.stage("load", |r| Ok(Database::parse(&r.read("database", &args.database)?)?))?;
    let opts = HistogramOptions {
        smoothing: args.smoothing,
        unvisited: match args.unvisited {
            Unvisited::Uniform => UnvisitedRows::Uniform,
            Unvisited::Stay => UnvisitedRows::Stay,
        },
        execution: exec,
    };
    let kernel = run.stage("estimate", |_| Ok(histogram_estimate(&db, states, actions, &opts)?))?;
    run.write("kernel.txt", write_transition(&kernel).as_bytes())?;
    run.finish("estimate", args, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_argument() {
        assert_eq!(parse_axis("-1:1.5:10").unwrap(), Axis { lower: -1.0, upper: 1.5, bins: 10 });
        assert!(parse_axis("1:0:3").is_err());
        assert!(parse_axis("0:1").is_err());
    }
}
