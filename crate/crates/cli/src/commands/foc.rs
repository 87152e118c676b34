use std::path::{Path, PathBuf};

use klioc::foc::{backward_recursion, check_boundedness, entropic_policy, optimal_cost, optimal_policy, ControlProblem};
use klioc::format::{read_gaussian_model, write_cost, write_policy};
use klioc::lqg::lqg_recursion;
use klioc::{Execution, ExtendedReal};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::parse_reals;

/// A comma-separated list of reals as one argument value.
#[derive(Clone, Debug, Serialize)]
#[serde(transparent)]
pub struct Reals(pub Vec<f64>);

fn reals(text: &str) -> Result<Reals, String> {
    parse_reals(text).map(Reals)
}
use crate::bundle::{parse_bundle, Loader, Source};
use crate::error::{CliError, CliResult};
use crate::run::Run;

#[derive(Debug, clap::Args, Serialize)]
#[command(group(clap::ArgGroup::new("input").required(true).args(["bundle", "gaussian"])))]
pub struct Args {
    /// Problem bundle (TOML).
    pub bundle: Option<PathBuf>,
    /// Gaussian-linear model file; solves the closed form instead.
    #[arg(long)]
    pub gaussian: Option<PathBuf>,
    /// Initial state `a,b,...` at which to report the optimal value and the
    /// first-step policy mean (with `--gaussian`).
    #[arg(long, value_parser = reals, requires = "gaussian")]
    pub x0: Option<Reals>,
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

fn unit() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct Bundle {
    #[serde(default = "one")]
    horizon: usize,
    #[serde(default = "unit")]
    epsilon: f64,
    target: Source,
    #[serde(default = "uniform")]
    reference_dynamics: Source,
    #[serde(default = "uniform")]
    reference_policy: Source,
    #[serde(default = "uniform")]
    prior: Source,
    /// Initial-state distribution; the prior when absent.
    #[serde(default)]
    initial: Option<Source>,
    cost: Source,
    #[serde(default = "yes")]
    boundedness: bool,
}

/// Above this many stored entries the dense uniform reference is not built,
/// and only the policy is reported.
const DENSE_LIMIT: usize = 4_000_000;

#[derive(Serialize)]
struct Report {
    horizon: usize,
    epsilon: f64,
    optimal_cost: Option<ExtendedReal>,
    nested_stage_sum: Option<f64>,
    boundedness: Option<klioc::foc::BoundednessReport>,
    notes: Vec<String>,
}

pub fn run(args: &Args, exec: Execution) -> CliResult<()> {
    match (&args.bundle, &args.gaussian) {
        (Some(b), None) => run_bundle(args, b, exec),
        (None, Some(g)) => run_gaussian(args, g),
        _ => Err(CliError::validation("give either a bundle or --gaussian")),
    }
}

/// Writes `policy.txt`, the resolved `cost.txt` and `report.json`.
fn run_bundle(args: &Args, path: &Path, exec: Execution) -> CliResult<()> {
    let mut run = Run::create(&args.out_dir)?;
    let bundle: Bundle = parse_bundle(&mut run, path)?;
    let loader = Loader::for_bundle(path, exec);
    let (target, ref_dyn, ref_pol, costs, prior, initial) = run.stage("load", |r| {
        let target = loader.kernel(r, "target", &bundle.target)?.ok_or_else(|| CliError::validation("the target kernel cannot be `uniform`"))?;
        let states = target.states().clone();
        let ref_dyn = loader.kernel(r, "reference_dynamics", &bundle.reference_dynamics)?;
        let ref_pol = loader.policy(r, "reference_policy", &bundle.reference_policy)?;
        let costs = loader.cost(r, &bundle.cost, &states)?;
        let prior = loader.distribution(r, "prior", &bundle.prior, &states)?;
        let initial = bundle.initial.as_ref().map(|s| loader.distribution(r, "initial", s, &states)).transpose()?;
        Ok((target, ref_dyn, ref_pol, costs, prior, initial))
    })?;
    let mut notes = Vec::new();
    let all_uniform = ref_dyn.is_none() && ref_pol.is_none();
    let entropic = if all_uniform {
        Some(run.stage("entropic_policy", |_| Ok(entropic_policy(&target, &costs, bundle.horizon, bundle.epsilon, exec)?))?)
    } else {
        None
    };
    let dense = target.n_states() * target.n_states() * target.n_actions();
    let mut report =
        Report { horizon: bundle.horizon, epsilon: bundle.epsilon, optimal_cost: None, nested_stage_sum: None, boundedness: None, notes: Vec::new() };
    let policy = if ref_dyn.is_none() && dense > DENSE_LIMIT {
        let Some(policy) = entropic else {
            return Err(CliError::validation(format!(
                "uniform reference dynamics would hold {dense} entries; supply them as a file or make the reference policy uniform too"
            )));
        };
        notes.push(format!("uniform reference dynamics would hold {dense} entries; optimal cost and boundedness skipped"));
        policy
    } else {
        let reference = loader.reference(&target, prior, ref_dyn, ref_pol)?;
        let mut prob = ControlProblem::new(bundle.horizon, target, reference, costs.clone())?.with_epsilon(bundle.epsilon)?.with_execution(exec);
        if let Some(init) = initial {
            prob = prob.with_initial(init)?;
        }
        let (policy, oc) = run.stage("recursion", |_| {
            let tables = backward_recursion(&prob)?;
            let policy = optimal_policy(&prob, &tables)?;
            Ok((policy, optimal_cost(&prob, &tables)?))
        })?;
        report.optimal_cost = Some(oc.value);
        report.nested_stage_sum = Some(oc.nested_stage_sum);
        if bundle.boundedness {
            report.boundedness = Some(run.stage("boundedness", |_| Ok(check_boundedness(&prob)?))?);
        }
        entropic.unwrap_or(policy)
    };
    report.notes = notes;
    run.write("policy.txt", write_policy(&policy).as_bytes())?;
    run.write("cost.txt", write_cost(&costs).as_bytes())?;
    run.write_json("report.json", &report)?;
    run.finish("foc", &serde_json::json!({ "args": args, "bundle": bundle }), None)
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn vector(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

/// Writes `gaussian.json` with the per-step policy and cost-to-go terms.
fn run_gaussian(args: &Args, path: &Path) -> CliResult<()> {
    let mut run = Run::create(&args.out_dir)?;
    let model = run.stage("load", |r| Ok(read_gaussian_model(&r.read("model", path)?)?))?;
    let state = run.stage("recursion", |_| Ok(lqg_recursion(&model)?))?;
    let steps: Vec<_> = (1..=state.horizon())
        .map(|k| {
            let s = state.step(k);
            serde_json::json!({
                "k": k,
                "sigma_star": rows(&s.sigma_star),
                "gain": rows(&s.gain),
                "offset": vector(&s.offset),
                "s_bar": rows(&s.s_bar),
            })
        })
        .collect();
    let cost_to_go: Vec<_> = (0..=state.horizon())
        .map(|k| {
            serde_json::json!({
                "k": k,
                "quadratic": rows(&state.s[k]),
                "linear": vector(&state.linear[k]),
                "constant": state.constant[k],
                "omega": state.omega[k],
            })
        })
        .collect();
    let mut out = serde_json::json!({ "horizon": state.horizon(), "steps": steps, "cost_to_go": cost_to_go });
    if let Some(Reals(x0)) = &args.x0 {
        if x0.len() != model.n() {
            return Err(CliError::validation(format!("--x0 has {} entries for a {}-dimensional state", x0.len(), model.n())));
        }
        let x = DVector::from_column_slice(x0);
        let (mean, _) = state.policy(1, &x);
        out["at_x0"] = serde_json::json!({ "x0": x0, "value": state.value(&x), "first_mean": vector(&mean) });
    }
    run.write_json("gaussian.json", &out)?;
    run.finish("foc", args, None)
}
