pub mod estimate;
pub mod eval;
pub mod foc;
pub mod ioc_fit;
pub mod simulate;

use std::path::PathBuf;

use clap::ValueEnum;
use klioc::estimation::Database;
use klioc::sim::{
    episode_rng, pendulum_closed_loop, robot_closed_loop, stabilization_trials, start_positions, tabular_controller, PendulumParams, RobotParams,
    HANGING,
};
use klioc::PolicyKernel;
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::run::Run;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum System {
    /// The 1 kg, 0.6 m pendulum.
    Pendulum,
    /// The lighter, shorter pendulum whose data builds the reference.
    PendulumReference,
    /// The planar robot in the obstacle field.
    Robot,
}

impl System {
    pub fn pendulum_params(self, run: &mut Run, file: Option<&PathBuf>) -> CliResult<PendulumParams> {
        let default = match self {
            System::Pendulum => PendulumParams::target(),
            System::PendulumReference => PendulumParams::reference(),
            System::Robot => return Err(CliError::validation("expected a pendulum system")),
        };
        let params = match file {
            Some(p) => toml::from_str(&run.read("params", p)?)?,
            None => default,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn robot_params(self, run: &mut Run, file: Option<&PathBuf>) -> CliResult<RobotParams> {
        let params: RobotParams = match file {
            Some(p) => toml::from_str(&run.read("params", p)?)?,
            None => RobotParams::default(),
        };
        params.validate()?;
        Ok(params)
    }
}

/// Parses `a,b,...` into reals.
pub fn parse_reals(text: &str) -> Result<Vec<f64>, String> {
    text.split(',').map(|t| t.trim().parse::<f64>().map_err(|_| format!("cannot parse `{t}` as a number"))).collect()
}

pub fn parse_point(text: &str) -> Result<[f64; 2], String> {
    match parse_reals(text)?[..] {
        [x, y] => Ok([x, y]),
        _ => Err(format!("expected `x,y`, got `{text}`")),
    }
}

/// Closed-loop settings shared by `simulate --policy` and `eval --policy`.
#[derive(Clone, Debug, clap::Args, Serialize)]
pub struct ClosedLoopArgs {
    /// Number of runs (per start position for the robot).
    #[arg(long, default_value_t = 20)]
    pub runs: usize,
    /// Steps per run (the maximum for the robot, which stops at the goal).
    #[arg(long, default_value_t = 100)]
    pub steps: usize,
    /// Upright tolerance on |theta| for the pendulum.
    #[arg(long, default_value_t = 0.2)]
    pub tolerance: f64,
    /// Robot start position `x,y`; repeat for several. Defaults to the four
    /// corner starts.
    #[arg(long = "start", value_parser = parse_point)]
    pub starts: Vec<[f64; 2]>,
}

#[derive(Debug, Serialize)]
#[serde(tag = "system", rename_all = "kebab-case")]
pub enum ClosedLoopSummary {
    Pendulum { runs: usize, entered: usize, success_rate: f64, hold_fraction: f64 },
    Robot { runs: usize, reached: usize, collision_free: usize, success_rate: f64, mean_steps_to_goal: Option<f64> },
}

/// Runs the policy in closed loop. Pendulum runs start hanging and run `i`
/// draws from stream `i` of `seed`; robot run `r` from start `s` uses stream
/// `s * runs + r`.
pub fn closed_loop(
    run: &mut Run,
    system: System,
    params: Option<&PathBuf>,
    args: &ClosedLoopArgs,
    seed: u64,
    policy: &PolicyKernel,
) -> CliResult<(Database, ClosedLoopSummary)> {
    if args.runs == 0 || args.steps == 0 {
        return Err(CliError::validation("--runs and --steps must be positive"));
    }
    if policy.steps().len() != 1 {
        return Err(CliError::validation("closed-loop runs need a stationary policy"));
    }
    match system {
        System::Pendulum | System::PendulumReference => {
            let p = system.pendulum_params(run, params)?;
            if policy.states().dims() != 2 || policy.actions().dims() != 1 {
                return Err(CliError::validation("pendulum policies need a 2-d state grid and a 1-d action grid"));
            }
            let datasets = (0..args.runs)
                .map(|i| pendulum_closed_loop(&p, policy, HANGING, args.steps, &mut episode_rng(seed, i as u64)))
                .collect::<klioc::Result<Vec<_>>>()?;
            let r = stabilization_trials(&p, policy, args.runs, args.steps, args.tolerance, seed)?;
            let summary =
                ClosedLoopSummary::Pendulum { runs: r.runs, entered: r.entered, success_rate: r.success_rate(), hold_fraction: r.hold_fraction };
            Ok((Database::new(datasets), summary))
        }
        System::Robot => {
            let p = system.robot_params(run, params)?;
            if policy.states().dims() != 2 || policy.actions().dims() != 2 {
                return Err(CliError::validation("robot policies need 2-d state and action grids"));
            }
            let starts = if args.starts.is_empty() { start_positions() } else { args.starts.clone() };
            let mut datasets = Vec::new();
            let (mut reached, mut clean, mut steps_to_goal) = (0, 0, Vec::new());
            for (s, &x0) in starts.iter().enumerate() {
                for r in 0..args.runs {
                    let mut rng = episode_rng(seed, (s * args.runs + r) as u64);
                    let out = robot_closed_loop(&p, x0, args.steps, true, &mut rng, tabular_controller(policy));
                    if let Some(k) = out.reached {
                        reached += 1;
                        steps_to_goal.push(k as f64);
                    }
                    clean += (out.collisions == 0) as usize;
                    datasets.push(out.to_dataset()?);
                }
            }
            let runs = datasets.len();
            let mean_steps_to_goal = (!steps_to_goal.is_empty()).then(|| steps_to_goal.iter().sum::<f64>() / steps_to_goal.len() as f64);
            let summary =
                ClosedLoopSummary::Robot { runs, reached, collision_free: clean, success_rate: reached as f64 / runs as f64, mean_steps_to_goal };
            Ok((Database::new(datasets), summary))
        }
    }
}
