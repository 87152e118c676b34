//! Forward optimal control for KL-regularized expected-cost problems.
//!
//! Given a target kernel `p(x_k | x_{k-1}, u_k)`, a reference model
//! `q_0, q(x_k | x_{k-1}, u_k), q(u_k | x_{k-1})` and stage costs `c_k`,
//! the policy minimizing `eps * KL(p_{0:N} || q_{0:N}) + sum_k E[c_k(X_k)]`
//! is a softmax over actions whose weights come from a backward
//! log-partition recursion ([`backward_recursion`], [`optimal_policy`]).

mod boundedness;
mod recursion;
mod rollout;

use std::sync::Arc;

pub use boundedness::{check_boundedness, BoundednessReport, TwistedReference, Verdict};
pub use recursion::{
    backward_recursion, closed_loop_marginals, entropic_policy, evaluate_functional, optimal_cost, optimal_policy, uniform_reference_policy,
    BackwardTables, OptimalCost,
};
pub use rollout::{rollout, Trajectory};

use crate::error::{Error, Result};
use crate::grid::GridSpace;
use crate::kernel::{CostTable, PolicyKernel, TransitionKernel};
use crate::par::Execution;
use crate::prob::DiscreteDistribution;

/// The joint the closed loop is regularized toward.
#[derive(Clone, Debug)]
pub struct ReferenceModel {
    pub prior: DiscreteDistribution,
    pub dynamics: TransitionKernel,
    pub policy: PolicyKernel,
}

impl ReferenceModel {
    /// Uniform prior, dynamics and policy on the grids of `target`.
    pub fn uniform(target: &TransitionKernel) -> Result<Self> {
        let (s, a) = (target.states().clone(), target.actions().clone());
        let ns = s.len();
        let mut rows = crate::kernel::SparseRows::new();
        for _ in 0..ns * a.len() {
            rows.push_row((0..ns).map(|i| (i, 1.0 / ns as f64)))?;
        }
        Ok(ReferenceModel {
            prior: DiscreteDistribution::uniform(s.clone()),
            dynamics: TransitionKernel::stationary(s.clone(), a.clone(), rows)?,
            policy: PolicyKernel::uniform(s, a),
        })
    }
}

#[derive(Clone, Debug)]
pub struct ControlProblem {
    horizon: usize,
    target: TransitionKernel,
    reference: ReferenceModel,
    initial: DiscreteDistribution,
    costs: CostTable,
    epsilon: f64,
    execution: Execution,
}

impl ControlProblem {
    /// The initial-state distribution defaults to the reference prior and
    /// `eps` to 1.
    pub fn new(horizon: usize, target: TransitionKernel, reference: ReferenceModel, costs: CostTable) -> Result<Self> {
        let initial = reference.prior.clone();
        let prob = ControlProblem { horizon, target, reference, initial, costs, epsilon: 1.0, execution: Execution::default() };
        prob.validate()?;
        Ok(prob)
    }

    pub fn with_initial(mut self, initial: DiscreteDistribution) -> Result<Self> {
        self.initial = initial;
        self.validate()?;
        Ok(self)
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Result<Self> {
        self.epsilon = epsilon;
        self.validate()?;
        Ok(self)
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Invalid("horizon must be at least 1".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Invalid(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        let states = self.target.states();
        if !self.target.same_grids(&self.reference.dynamics) {
            return Err(Error::Structure("target and reference dynamics use different grids".into()));
        }
        if !self.reference.policy.compatible_with(&self.target) {
            return Err(Error::Structure("reference policy grids differ from the dynamics".into()));
        }
        for (name, g) in
            [("reference prior", self.reference.prior.grid()), ("initial distribution", self.initial.grid()), ("cost table", self.costs.states())]
        {
            if g.as_ref() != states.as_ref() {
                return Err(Error::Structure(format!("{name} is not on the state grid")));
            }
        }
        let n = self.horizon;
        for (name, ok) in [
            ("target dynamics", self.target.covers(n)),
            ("reference dynamics", self.reference.dynamics.covers(n)),
            ("reference policy", self.reference.policy.covers(n)),
            ("costs", self.costs.covers(n)),
        ] {
            if !ok {
                return Err(Error::Structure(format!("{name} do not cover horizon {n}")));
            }
        }
        Ok(())
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn target(&self) -> &TransitionKernel {
        &self.target
    }

    pub fn reference(&self) -> &ReferenceModel {
        &self.reference
    }

    pub fn initial(&self) -> &DiscreteDistribution {
        &self.initial
    }

    pub fn costs(&self) -> &CostTable {
        &self.costs
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn execution(&self) -> Execution {
        self.execution
    }

    pub fn states(&self) -> &Arc<GridSpace> {
        self.target.states()
    }

    pub fn actions(&self) -> &Arc<GridSpace> {
        self.target.actions()
    }

    pub fn n_states(&self) -> usize {
        self.target.n_states()
    }

    pub fn n_actions(&self) -> usize {
        self.target.n_actions()
    }
}
