use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::CostTable;
use crate::par::Execution;
use crate::solver::{minimize, SolverConfig, Status};

use super::features::FeatureTable;
use super::likelihood::{LikelihoodTable, Objective, WeightMode};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub mode: WeightMode,
    /// Restrict every weight to be `<= 0`.
    pub nonpositive: bool,
    /// Optional `ridge/2 |w|^2` penalty; zero gives the plain maximum-likelihood fit.
    pub ridge: f64,
    pub solver: SolverConfig,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { mode: WeightMode::Stationary, nonpositive: false, ridge: 0.0, solver: SolverConfig::default(), execution: Execution::default() }
    }
}

/// Stationary weights `w ∈ R^F`, or one block of `F` per observation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub mode: WeightMode,
    pub features: usize,
    pub values: Vec<f64>,
}

impl WeightVector {
    pub fn stationary(values: Vec<f64>) -> Self {
        WeightVector { mode: WeightMode::Stationary, features: values.len(), values }
    }

    pub fn blocks(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.features)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitReport {
    pub weights: WeightVector,
    pub status: Status,
    pub grad_norm: f64,
    pub iterations: usize,
    /// Objective without the weight-independent base-measure term.
    pub nll: f64,
    /// Full negative log-likelihood of the observed actions.
    pub full_nll: f64,
    /// Features whose expected value is identical across every admissible
    /// action of every observation; their weights are not identified.
    pub flat_features: Vec<usize>,
}

/// Features that never vary across actions: the softmax is invariant to
/// their weight.
pub fn flat_features(table: &LikelihoodTable) -> Vec<usize> {
    (0..table.n_features())
        .filter(|&f| {
            (0..table.n_obs()).all(|m| {
                let lq = table.log_q_hat(m);
                let vals: Vec<f64> = (0..table.n_actions()).filter(|&u| lq[u] > f64::NEG_INFINITY).map(|u| table.phi(m, u)[f]).collect();
                let (lo, hi) = vals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
                hi - lo <= 1e-12 * hi.abs().max(lo.abs()).max(1.0)
            })
        })
        .collect()
}

/// Maximum-likelihood weights, starting from `w = 0`.
pub fn fit(table: &LikelihoodTable, opts: &FitOptions) -> Result<FitReport> {
    if !(opts.ridge >= 0.0 && opts.ridge.is_finite()) {
        return Err(Error::Invalid(format!("ridge must be >= 0, got {}", opts.ridge)));
    }
    let obj = Objective { table, mode: opts.mode, ridge: opts.ridge, execution: opts.execution };
    let cfg = SolverConfig { nonpositive: opts.nonpositive, ..opts.solver.clone() };
    let sol = minimize(|w, g| obj.value_grad(w, g), &vec![0.0; obj.dim()], &cfg)?;
    let ridge_part = 0.5 * opts.ridge * sol.x.iter().map(|v| v * v).sum::<f64>();
    let nll = sol.value - ridge_part;
    Ok(FitReport {
        weights: WeightVector { mode: opts.mode, features: table.n_features(), values: sol.x },
        status: sol.status,
        grad_norm: sol.grad_norm,
        iterations: sol.iterations,
        nll,
        full_nll: nll + table.base_measure_term(),
        flat_features: flat_features(table),
    })
}

/// `c(x) = -w^T h(x)` on the grid; one table per weight block.
pub fn reconstruct_cost(features: &FeatureTable, w: &WeightVector, states: std::sync::Arc<crate::GridSpace>) -> Result<CostTable> {
    if w.features != features.features() {
        return Err(Error::Structure(format!("{} weights per block for {} features", w.features, features.features())));
    }
    let steps =
        w.blocks().map(|b| (0..features.cells()).map(|x| -b.iter().zip(features.cell(x)).map(|(a, h)| a * h).sum::<f64>()).collect()).collect();
    CostTable::new(states, steps)
}
