//! Seeded random tabular instances for tests, benchmarks and smoke runs.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::foc::{ControlProblem, ReferenceModel};
use crate::grid::GridSpace;
use crate::kernel::{CostTable, PolicyKernel, SparseRows, TransitionKernel};
use crate::prob::DiscreteDistribution;

/// A strictly positive probability vector with log-normal weights.
pub fn random_simplex<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).map(|z: f64| z.exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

pub fn random_distribution(n: usize, seed: u64) -> DiscreteDistribution {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = Arc::new(GridSpace::indexed(n).unwrap());
    DiscreteDistribution::from_weights(grid, random_simplex(n, &mut rng)).unwrap()
}

fn random_kernel<R: Rng>(states: &Arc<GridSpace>, actions: &Arc<GridSpace>, steps: usize, rng: &mut R) -> TransitionKernel {
    let ns = states.len();
    let tables = (0..steps)
        .map(|_| {
            let mut rows = SparseRows::new();
            for _ in 0..ns * actions.len() {
                let r = random_simplex(ns, rng);
                rows.push_row(r.iter().copied().enumerate()).unwrap();
            }
            rows
        })
        .collect();
    TransitionKernel::new(states.clone(), actions.clone(), tables).unwrap()
}

fn random_policy<R: Rng>(states: &Arc<GridSpace>, actions: &Arc<GridSpace>, steps: usize, rng: &mut R) -> PolicyKernel {
    let tables = (0..steps).map(|_| (0..states.len()).flat_map(|_| random_simplex(actions.len(), rng)).collect()).collect();
    PolicyKernel::new(states.clone(), actions.clone(), tables).unwrap()
}

/// A policy drawn uniformly at random per row (log-normal weights).
pub fn random_policy_for(prob: &ControlProblem, seed: u64) -> PolicyKernel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_policy(prob.states(), prob.actions(), prob.horizon(), &mut rng)
}

/// Non-stationary problem with dense strictly positive kernels, a random
/// reference prior and standard-normal costs.
pub fn random_problem(horizon: usize, ns: usize, na: usize, seed: u64) -> ControlProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let states = Arc::new(GridSpace::indexed(ns).unwrap());
    let actions = Arc::new(GridSpace::indexed(na).unwrap());
    let target = random_kernel(&states, &actions, horizon, &mut rng);
    let reference = ReferenceModel {
        prior: DiscreteDistribution::from_weights(states.clone(), random_simplex(ns, &mut rng)).unwrap(),
        dynamics: random_kernel(&states, &actions, horizon, &mut rng),
        policy: random_policy(&states, &actions, horizon, &mut rng),
    };
    let costs = (0..horizon).map(|_| (0..ns).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
    let costs = CostTable::new(states, costs).unwrap();
    ControlProblem::new(horizon, target, reference, costs).unwrap()
}

/// Like [`random_problem`] but the reference forbids action 0 in even states.
pub fn random_problem_with_zero_action(horizon: usize, ns: usize, na: usize, seed: u64) -> ControlProblem {
    let base = random_problem(horizon, ns, na, seed);
    let mut steps = base.reference().policy.steps().to_vec();
    for t in &mut steps {
        for (x, row) in t.chunks_mut(na).enumerate() {
            if x % 2 == 0 {
                row[0] = 0.0;
                let s: f64 = row.iter().sum();
                row.iter_mut().for_each(|v| *v /= s);
            }
        }
    }
    let policy = PolicyKernel::new(base.states().clone(), base.actions().clone(), steps).unwrap();
    let reference = ReferenceModel { policy, ..base.reference().clone() };
    ControlProblem::new(horizon, base.target().clone(), reference, base.costs().clone()).unwrap()
}

/// Target dynamics equal to the reference dynamics and zero cost.
pub fn matched_zero_cost_problem(horizon: usize, ns: usize, na: usize, seed: u64) -> ControlProblem {
    let base = random_problem(horizon, ns, na, seed);
    let reference = base.reference().clone();
    ControlProblem::new(horizon, reference.dynamics.clone(), reference, CostTable::zeros(base.states().clone())).unwrap()
}

/// Deterministic random target (delta rows), uniform reference, random costs.
pub fn deterministic_uniform_problem(horizon: usize, ns: usize, na: usize) -> ControlProblem {
    let base = random_problem(horizon, ns, na, 1234);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut rows = SparseRows::new();
    for _ in 0..ns * na {
        rows.push_row([(rng.random_range(0..ns), 1.0)]).unwrap();
    }
    let target = TransitionKernel::stationary(base.states().clone(), base.actions().clone(), rows).unwrap();
    let reference = ReferenceModel::uniform(&target).unwrap();
    ControlProblem::new(horizon, target, reference, base.costs().clone()).unwrap()
}

/// Greedy-policy data on a random single-step problem: states drawn
/// uniformly, actions from `π(u|x) ∝ q̂(x,u) exp(w_true^T φ(x,u))`, with
/// standard-normal features on each cell.
pub fn ioc_instance(ns: usize, na: usize, m: usize, w_true: &[f64], seed: u64) -> crate::ioc::IocProblem {
    use crate::ioc::{FeatureTable, IocProblem, LikelihoodTable, Observation};
    let base = random_problem(1, ns, na, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let nf = w_true.len();
    let values: Vec<f64> = (0..ns * nf).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut prob = IocProblem {
        target: base.target().clone(),
        reference_dynamics: base.reference().dynamics.clone(),
        reference_policy: base.reference().policy.clone(),
        features: FeatureTable::new(nf, values).unwrap(),
        observations: (0..ns).map(|x| Observation { step: 1, state: x, action: 0 }).collect(),
    };
    let table = LikelihoodTable::from_problem(&prob, crate::Execution::Sequential).unwrap();
    prob.observations = (0..m)
        .map(|_| {
            let state = rng.random_range(0..ns);
            let action = crate::prob::sample_weights(&table.policy(state, w_true), &mut rng);
            Observation { step: 1, state, action }
        })
        .collect();
    prob
}

pub fn random_ioc_problem(ns: usize, na: usize, m: usize, seed: u64) -> crate::ioc::IocProblem {
    ioc_instance(ns, na, m, &[-1.0, 0.5], seed)
}

/// Target dynamics equal to the reference dynamics.
pub fn matched_ioc_problem(ns: usize, na: usize, m: usize, seed: u64) -> crate::ioc::IocProblem {
    let mut prob = random_ioc_problem(ns, na, m, seed);
    prob.target = prob.reference_dynamics.clone();
    prob
}
