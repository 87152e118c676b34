//! Problem bundles: TOML files naming the kernels, policies and costs a run
//! needs. Each entry is a path relative to the bundle, the string
//! `"uniform"`, or an inline `{ builtin = "..." }` table.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use klioc::foc::ReferenceModel;
use klioc::format::{read_cost, read_distribution, read_policy, read_transition};
use klioc::sim::{pendulum_cost_table, reference_pendulum_policy, scenario2_costs, scenario2_kernel, PendulumParams, RobotParams, SwingUpController};
use klioc::{CostTable, DiscreteDistribution, Execution, GridSpace, PolicyKernel, TransitionKernel};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::run::Run;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Source {
    /// `"uniform"` or a file path.
    Named(String),
    Builtin(Box<Builtin>),
}

/// Models generated in-process.
///
/// | name             | usable as           |
/// |------------------|---------------------|
/// | `obstacle_field` | target, dynamics, cost |
/// | `swing_up`       | reference policy    |
/// | `pendulum`       | cost                |
/// | `zero`           | cost                |
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Builtin {
    pub builtin: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pendulum: Option<PendulumParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controller: Option<SwingUpController>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robot: Option<RobotParams>,
}

pub fn parse_bundle<T: for<'de> Deserialize<'de>>(run: &mut Run, path: &Path) -> CliResult<T> {
    let text = run.read("bundle", path)?;
    toml::from_str(&text).map_err(|e| CliError::validation(format!("bundle {}: {e}", path.display())))
}

/// Resolves bundle entries against the bundle's directory.
pub struct Loader {
    pub base: PathBuf,
    pub execution: Execution,
}

fn unknown(role: &str, name: &str) -> CliError {
    CliError::validation(format!("builtin `{name}` cannot be used as {role}"))
}

impl Loader {
    pub fn for_bundle(bundle: &Path, execution: Execution) -> Self {
        let base = bundle.parent().map(Path::to_path_buf).unwrap_or_default();
        Loader { base, execution }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.base.join(name)
    }

    fn robot_grids(b: &Builtin) -> CliResult<(RobotParams, Arc<GridSpace>, Arc<GridSpace>)> {
        let params = b.robot.clone().unwrap_or_default();
        let states = params.state_grid()?;
        let actions = params.action_grid(params.action_bins)?;
        Ok((params, states, actions))
    }

    /// `None` for `"uniform"`.
    pub fn kernel(&self, run: &mut Run, role: &str, src: &Source) -> CliResult<Option<TransitionKernel>> {
        match src {
            Source::Named(n) if n == "uniform" => Ok(None),
            Source::Named(n) => {
                let text = run.read(role, &self.path(n))?;
                Ok(Some(read_transition(&text).map_err(|e| CliError::from(e).context(format!("{role} {n}")))?))
            }
            Source::Builtin(b) => match b.builtin.as_str() {
                "obstacle_field" => {
                    let (params, states, actions) = Self::robot_grids(b)?;
                    Ok(Some(scenario2_kernel(&params, states, actions, self.execution)?))
                }
                other => Err(unknown(role, other)),
            },
        }
    }

    /// `None` for `"uniform"`.
    pub fn policy(&self, run: &mut Run, role: &str, src: &Source) -> CliResult<Option<PolicyKernel>> {
        match src {
            Source::Named(n) if n == "uniform" => Ok(None),
            Source::Named(n) => {
                let text = run.read(role, &self.path(n))?;
                Ok(Some(read_policy(&text).map_err(|e| CliError::from(e).context(format!("{role} {n}")))?))
            }
            Source::Builtin(b) => match b.builtin.as_str() {
                "swing_up" => {
                    let params = b.pendulum.clone().unwrap_or_else(PendulumParams::reference);
                    let controller = b.controller.clone().unwrap_or_default();
                    Ok(Some(reference_pendulum_policy(&params, &controller)?))
                }
                other => Err(unknown(role, other)),
            },
        }
    }

    pub fn cost(&self, run: &mut Run, src: &Source, states: &Arc<GridSpace>) -> CliResult<CostTable> {
        match src {
            Source::Named(n) if n == "uniform" => Err(CliError::validation("a cost cannot be `uniform`; use { builtin = \"zero\" }")),
            Source::Named(n) => {
                let text = run.read("cost", &self.path(n))?;
                Ok(read_cost(&text).map_err(|e| CliError::from(e).context(format!("cost {n}")))?)
            }
            Source::Builtin(b) => match b.builtin.as_str() {
                "zero" => Ok(CostTable::zeros(states.clone())),
                "pendulum" => Ok(pendulum_cost_table(states.clone())?),
                "obstacle_field" => Ok(scenario2_costs(&b.robot.clone().unwrap_or_default(), states.clone())?),
                other => Err(unknown("cost", other)),
            },
        }
    }

    pub fn distribution(&self, run: &mut Run, role: &str, src: &Source, states: &Arc<GridSpace>) -> CliResult<DiscreteDistribution> {
        match src {
            Source::Named(n) if n == "uniform" => Ok(DiscreteDistribution::uniform(states.clone())),
            Source::Named(n) => {
                let text = run.read(role, &self.path(n))?;
                Ok(read_distribution(&text).map_err(|e| CliError::from(e).context(format!("{role} {n}")))?)
            }
            Source::Builtin(b) => Err(unknown(role, &b.builtin)),
        }
    }

    /// Fills in uniform parts of the reference with dense uniform tables on
    /// the target's grids.
    pub fn reference(
        &self,
        target: &TransitionKernel,
        prior: DiscreteDistribution,
        dynamics: Option<TransitionKernel>,
        policy: Option<PolicyKernel>,
    ) -> CliResult<ReferenceModel> {
        let uniform = if dynamics.is_none() { Some(ReferenceModel::uniform(target)?) } else { None };
        let dynamics = match dynamics {
            Some(d) => d,
            None => uniform.expect("built above").dynamics,
        };
        let policy = policy.unwrap_or_else(|| PolicyKernel::uniform(target.states().clone(), target.actions().clone()));
        if !dynamics.same_grids(target) || !policy.compatible_with(target) {
            return Err(CliError::validation("reference dynamics and policy must use the target's grids"));
        }
        Ok(ReferenceModel { prior, dynamics, policy })
    }
}
