use std::path::PathBuf;

use klioc::estimation::{filter_angle_wrap, Database};
use klioc::format::write_cost;
use klioc::ioc::{fit, reconstruct_cost, FeatureBasis, FitOptions, IocProblem, LikelihoodTable, NamedFeature, Observation, WeightMode};
use klioc::solver::{SolverConfig, Status};
use klioc::{DiscreteDistribution, Execution, GridSpace};
use serde::{Deserialize, Serialize};

use crate::bundle::{parse_bundle, Loader, Source};
use crate::error::{CliError, CliResult};
use crate::run::Run;

#[derive(Debug, clap::Args, Serialize)]
pub struct Args {
    /// Fit bundle (TOML).
    pub bundle: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub out_dir: PathBuf,
}

fn uniform() -> Source {
    Source::Named("uniform".into())
}

fn one() -> usize {
    1
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct Bundle {
    target: Source,
    #[serde(default = "uniform")]
    reference_dynamics: Source,
    #[serde(default = "uniform")]
    reference_policy: Source,
    /// Database file of observed trajectories.
    observations: String,
    /// Indices of the datasets to use; all when absent.
    #[serde(default)]
    datasets: Option<Vec<usize>>,
    /// Drop pairs whose value on this coordinate jumps across the angle seam.
    #[serde(default)]
    wrap_coordinate: Option<usize>,
    /// Step `k` of the kernels every observation is matched against.
    #[serde(default = "one")]
    step: usize,
    #[serde(default)]
    mode: WeightMode,
    #[serde(default)]
    nonpositive: bool,
    #[serde(default)]
    ridge: f64,
    #[serde(default)]
    solver: SolverConfig,
    feature: Vec<NamedFeature>,
}

#[derive(Serialize)]
struct Weights<'a> {
    names: Vec<String>,
    observations: usize,
    #[serde(flatten)]
    report: &'a klioc::ioc::FitReport,
}

fn observations(db: &Database, bundle: &Bundle, states: &GridSpace, actions: &GridSpace) -> CliResult<Vec<Observation>> {
    let chosen: Vec<usize> = bundle.datasets.clone().unwrap_or_else(|| (0..db.datasets.len()).collect());
    let mut out = Vec::new();
    for i in chosen {
        let ds =
            db.datasets.get(i).ok_or_else(|| CliError::validation(format!("dataset {i} not in the database ({} datasets)", db.datasets.len())))?;
        if ds.state_dims() != states.dims() || ds.action_dims().is_some_and(|p| p != actions.dims()) {
            return Err(CliError::validation(format!("dataset {i} does not match the kernel's grid dimensions")));
        }
        let keep = match bundle.wrap_coordinate {
            Some(c) if c >= states.dims() => return Err(CliError::validation(format!("wrap_coordinate {c} exceeds the state dimension"))),
            Some(c) => filter_angle_wrap(ds, c),
            None => (1..=ds.len()).collect(),
        };
        out.extend(keep.into_iter().map(|k| {
            let (x, u) = ds.pair(k);
            Observation { step: bundle.step, state: states.index_of(x), action: actions.index_of(u) }
        }));
    }
    if out.is_empty() {
        return Err(CliError::validation("no observations selected"));
    }
    Ok(out)
}

/// Writes `weights.json` and the reconstructed `cost.txt`. A fit that stops
/// short of convergence still writes both, then exits with status 4.
pub fn run(args: &Args, exec: Execution) -> CliResult<()> {
    let mut run = Run::create(&args.out_dir)?;
    let bundle: Bundle = parse_bundle(&mut run, &args.bundle)?;
    let loader = Loader::for_bundle(&args.bundle, exec);
    let (table, features, states, n_obs) = run.stage("load", |r| {
        let target = loader.kernel(r, "target", &bundle.target)?.ok_or_else(|| CliError::validation("the target kernel cannot be `uniform`"))?;
        let ref_dyn = loader.kernel(r, "reference_dynamics", &bundle.reference_dynamics)?;
        let ref_pol = loader.policy(r, "reference_policy", &bundle.reference_policy)?;
        let db_path = loader.base.join(&bundle.observations);
        let db = Database::parse(&r.read("observations", &db_path)?).map_err(|e| CliError::from(e).context(&bundle.observations))?;
        let states = target.states().clone();
        let obs = observations(&db, &bundle, &states, target.actions())?;
        let features = FeatureBasis::new(bundle.feature.clone(), states.dims())?.on_grid(&states)?;
        let table = if ref_dyn.is_none() && ref_pol.is_none() {
            LikelihoodTable::uniform_reference(&target, &features, &obs, exec)?
        } else {
            let reference = loader.reference(&target, DiscreteDistribution::uniform(states.clone()), ref_dyn, ref_pol)?;
            let prob = IocProblem {
                target,
                reference_dynamics: reference.dynamics,
                reference_policy: reference.policy,
                features: features.clone(),
                observations: obs.clone(),
            };
            prob.validate()?;
            LikelihoodTable::from_problem(&prob, exec)?
        };
        Ok((table, features, states, obs.len()))
    })?;
    let opts = FitOptions { mode: bundle.mode, nonpositive: bundle.nonpositive, ridge: bundle.ridge, solver: bundle.solver.clone(), execution: exec };
    opts.solver.validate()?;
    let report = run.stage("fit", |_| Ok(fit(&table, &opts)?))?;
    let cost = reconstruct_cost(&features, &report.weights, states)?;
    let names = bundle.feature.iter().map(|f| f.name.clone()).collect();
    run.write_json("weights.json", &Weights { names, observations: n_obs, report: &report })?;
    run.write("cost.txt", write_cost(&cost).as_bytes())?;
    run.finish("ioc-fit", &serde_json::json!({ "args": args, "bundle": bundle }), None)?;
    if report.status != Status::Converged {
        return Err(CliError::non_convergence(format!(
            "solver stopped with status {:?} after {} iterations (gradient norm {:e})",
            report.status, report.iterations, report.grad_norm
        )));
    }
    Ok(())
}
