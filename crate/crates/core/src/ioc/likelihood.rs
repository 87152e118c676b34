//! The inverse-control likelihood.
//!
//! Under the greedy (one-step) optimal policy with cost `-w^T h`, the
//! probability of action `u` at state `x` is proportional to
//! `q̂(x, u) exp(w^T φ(x, u))`, where `q̂ = q(u|x) exp(-KL(p || q))` and
//! `φ(x, u) = E_{p(.|x,u)}[h]`. Everything the objective needs is therefore
//! a per-observation table of `ln q̂` and `φ`.

use crate::error::{Error, Result};
use crate::kernel::{PolicyKernel, TransitionKernel};
use crate::numeric::log_sum_exp;
use crate::par::Execution;

use super::features::FeatureTable;

/// One observed pair `(x̂_{k-1}, û_k)` as cells, with the step `k` used to
/// select non-stationary kernels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Observation {
    pub step: usize,
    pub state: usize,
    pub action: usize,
}

/// Observations plus the target and reference kernels and a feature table
/// on the state grid.
#[derive(Clone, Debug)]
pub struct IocProblem {
    pub target: TransitionKernel,
    pub reference_dynamics: TransitionKernel,
    pub reference_policy: PolicyKernel,
    pub features: FeatureTable,
    pub observations: Vec<Observation>,
}

impl IocProblem {
    pub fn validate(&self) -> Result<()> {
        if self.observations.is_empty() {
            return Err(Error::Invalid("at least one observation is required".into()));
        }
        if !self.target.same_grids(&self.reference_dynamics) || !self.reference_policy.compatible_with(&self.target) {
            return Err(Error::Structure("kernels use different grids".into()));
        }
        if self.features.cells() != self.target.n_states() {
            return Err(Error::Structure("feature table is not on the state grid".into()));
        }
        for (m, o) in self.observations.iter().enumerate() {
            if o.state >= self.target.n_states() || o.action >= self.target.n_actions() {
                return Err(Error::Structure(format!("observation {m} lies outside the grids")));
            }
            if o.step == 0 || !(self.target.covers(o.step) && self.reference_dynamics.covers(o.step) && self.reference_policy.covers(o.step)) {
                return Err(Error::Structure(format!("observation {m} refers to step {} not covered by the kernels", o.step)));
            }
        }
        Ok(())
    }
}

/// `q̂(x̂_m, u)` for each observation `m` (rows) and action `u`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModifiedControlTable {
    pub n_actions: usize,
    pub values: Vec<f64>,
}

impl ModifiedControlTable {
    pub fn row(&self, m: usize) -> &[f64] {
        &self.values[m * self.n_actions..(m + 1) * self.n_actions]
    }
}

pub fn modified_control(prob: &IocProblem) -> Result<ModifiedControlTable> {
    prob.validate()?;
    let na = prob.target.n_actions();
    let mut values = Vec::with_capacity(prob.observations.len() * na);
    for (m, o) in prob.observations.iter().enumerate() {
        let q_u = prob.reference_policy.row(o.step, o.state);
        let row: Vec<f64> = (0..na)
            .map(|u| {
                let kl = prob.target.row(o.step, o.state, u).kl(&prob.reference_dynamics.row(o.step, o.state, u));
                q_u[u] * kl.exp_neg()
            })
            .collect();
        if row[o.action] == 0.0 {
            return Err(Error::ZeroLikelihood { observation: m });
        }
        values.extend(row);
    }
    Ok(ModifiedControlTable { n_actions: na, values })
}

/// Per observation: `ln q̂` for every action, `φ` for every action and the
/// observed action index.
#[derive(Clone, Debug, PartialEq)]
pub struct LikelihoodTable {
    n_obs: usize,
    n_actions: usize,
    n_features: usize,
    log_q_hat: Vec<f64>,
    phi: Vec<f64>,
    observed: Vec<usize>,
}

impl LikelihoodTable {
    /// `log_q_hat` is `M x U`, `phi` is `M x U x F`; `-inf` marks zero weight.
    pub fn new(n_actions: usize, n_features: usize, log_q_hat: Vec<f64>, phi: Vec<f64>, observed: Vec<usize>) -> Result<Self> {
        let n_obs = observed.len();
        if n_obs == 0 || n_actions == 0 || n_features == 0 {
            return Err(Error::Invalid("likelihood table needs observations, actions and features".into()));
        }
        if log_q_hat.len() != n_obs * n_actions || phi.len() != n_obs * n_actions * n_features {
            return Err(Error::Structure("likelihood table sizes are inconsistent".into()));
        }
        if phi.iter().any(|v| !v.is_finite()) || log_q_hat.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::Invalid("likelihood table has non-finite entries".into()));
        }
        for (m, &u) in observed.iter().enumerate() {
            if u >= n_actions {
                return Err(Error::Structure(format!("observation {m} has action {u} out of range")));
            }
            if log_q_hat[m * n_actions + u] == f64::NEG_INFINITY {
                return Err(Error::ZeroLikelihood { observation: m });
            }
        }
        Ok(LikelihoodTable { n_obs, n_actions, n_features, log_q_hat, phi, observed })
    }

    pub fn from_problem(prob: &IocProblem, exec: Execution) -> Result<Self> {
        prob.validate()?;
        let (na, nf) = (prob.target.n_actions(), prob.features.features());
        let rows = exec.map(prob.observations.len(), |m| {
            let o = prob.observations[m];
            let q_u = prob.reference_policy.row(o.step, o.state);
            let mut lq = vec![f64::NEG_INFINITY; na];
            let mut phi = vec![0.0; na * nf];
            for u in 0..na {
                let p = prob.target.row(o.step, o.state, u);
                if q_u[u] > 0.0 {
                    lq[u] = q_u[u].ln() + p.kl(&prob.reference_dynamics.row(o.step, o.state, u)).neg_log_weight();
                }
                let slot = &mut phi[u * nf..(u + 1) * nf];
                for (y, mass) in p.iter() {
                    for (s, h) in slot.iter_mut().zip(prob.features.cell(y)) {
                        *s += mass * h;
                    }
                }
            }
            (lq, phi)
        });
        let mut log_q_hat = Vec::with_capacity(rows.len() * na);
        let mut phi = Vec::with_capacity(rows.len() * na * nf);
        for (lq, p) in rows {
            log_q_hat.extend(lq);
            phi.extend(p);
        }
        let observed = prob.observations.iter().map(|o| o.action).collect();
        Self::new(na, nf, log_q_hat, phi, observed)
    }

    /// The table for uniform reference dynamics and policy, built from the
    /// target rows alone: `ln q̂(u|x) = -ln |U| - ln |X| + H(p(.|x, u))`.
    pub fn uniform_reference(target: &TransitionKernel, features: &FeatureTable, observations: &[Observation], exec: Execution) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::Invalid("at least one observation is required".into()));
        }
        if features.cells() != target.n_states() {
            return Err(Error::Structure("feature table does not cover the state grid".into()));
        }
        let (ns, na, nf) = (target.n_states(), target.n_actions(), features.features());
        for (m, o) in observations.iter().enumerate() {
            if o.state >= ns || o.action >= na || !target.covers(o.step) || o.step == 0 {
                return Err(Error::Structure(format!("observation {m} lies outside the kernel")));
            }
        }
        let offset = -((na as f64).ln() + (ns as f64).ln());
        let rows = exec.map(observations.len(), |m| {
            let o = observations[m];
            let mut lq = vec![0.0; na];
            let mut phi = vec![0.0; na * nf];
            for u in 0..na {
                let p = target.row(o.step, o.state, u);
                lq[u] = offset - p.neg_entropy();
                let slot = &mut phi[u * nf..(u + 1) * nf];
                for (y, mass) in p.iter() {
                    for (s, h) in slot.iter_mut().zip(features.cell(y)) {
                        *s += mass * h;
                    }
                }
            }
            (lq, phi)
        });
        let mut log_q_hat = Vec::with_capacity(rows.len() * na);
        let mut phi = Vec::with_capacity(rows.len() * na * nf);
        for (lq, p) in rows {
            log_q_hat.extend(lq);
            phi.extend(p);
        }
        Self::new(na, nf, log_q_hat, phi, observations.iter().map(|o| o.action).collect())
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn observed(&self) -> &[usize] {
        &self.observed
    }

    pub fn log_q_hat(&self, m: usize) -> &[f64] {
        &self.log_q_hat[m * self.n_actions..(m + 1) * self.n_actions]
    }

    /// `φ(x̂_m, u)`.
    pub fn phi(&self, m: usize, u: usize) -> &[f64] {
        let base = (m * self.n_actions + u) * self.n_features;
        &self.phi[base..base + self.n_features]
    }

    /// The induced policy `π_w(.|x̂_m)` for the weight block `w`.
    pub fn policy(&self, m: usize, w: &[f64]) -> Vec<f64> {
        let mut logits = self.logits(m, w);
        crate::numeric::softmax_in_place(&mut logits).expect("observed action has positive weight");
        logits
    }

    fn logits(&self, m: usize, w: &[f64]) -> Vec<f64> {
        let lq = self.log_q_hat(m);
        (0..self.n_actions).map(|u| if lq[u] == f64::NEG_INFINITY { lq[u] } else { lq[u] + dot(w, self.phi(m, u)) }).collect()
    }

    /// Contribution of observation `m`: value and gradient (added into `g`).
    fn term(&self, m: usize, w: &[f64], g: &mut [f64]) -> f64 {
        let mut logits = self.logits(m, w);
        let lse = log_sum_exp(&logits);
        let obs = self.observed[m];
        let value = lse - dot(w, self.phi(m, obs));
        for l in logits.iter_mut() {
            *l = crate::numeric::exp_floor(*l - lse);
        }
        for (u, &p) in logits.iter().enumerate() {
            if p > 0.0 {
                for (gi, f) in g.iter_mut().zip(self.phi(m, u)) {
                    *gi += p * f;
                }
            }
        }
        for (gi, f) in g.iter_mut().zip(self.phi(m, obs)) {
            *gi -= f;
        }
        value
    }

    /// Sum of `-ln q̂(x̂_m, û_m)`, the weight-independent part of the full
    /// negative log-likelihood.
    pub fn base_measure_term(&self) -> f64 {
        (0..self.n_obs).map(|m| -self.log_q_hat(m)[self.observed[m]]).sum()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Whether one weight vector is shared by all observations or each
/// observation has its own block.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    #[default]
    Stationary,
    PerObservation,
}

/// The objective `sum_m [LSE_u(ln q̂ + w^T φ) - w^T φ(û)] + ridge/2 |w|^2`.
pub struct Objective<'a> {
    pub table: &'a LikelihoodTable,
    pub mode: WeightMode,
    pub ridge: f64,
    pub execution: Execution,
}

const CHUNK: usize = 64;

impl Objective<'_> {
    pub fn dim(&self) -> usize {
        match self.mode {
            WeightMode::Stationary => self.table.n_features,
            WeightMode::PerObservation => self.table.n_features * self.table.n_obs,
        }
    }

    /// Value and gradient; observation sums are accumulated in fixed chunks
    /// so both execution modes give identical bits.
    pub fn value_grad(&self, w: &[f64], g: &mut [f64]) -> f64 {
        let nf = self.table.n_features;
        let n = self.table.n_obs;
        let value = match self.mode {
            WeightMode::Stationary => {
                let parts = self.execution.map(n.div_ceil(CHUNK), |c| {
                    let mut gc = vec![0.0; nf];
                    let v: f64 = (c * CHUNK..((c + 1) * CHUNK).min(n)).map(|m| self.table.term(m, w, &mut gc)).sum();
                    (v, gc)
                });
                g.iter_mut().for_each(|v| *v = 0.0);
                let mut total = 0.0;
                for (v, gc) in parts {
                    total += v;
                    g.iter_mut().zip(&gc).for_each(|(a, b)| *a += b);
                }
                total
            }
            WeightMode::PerObservation => {
                g.iter_mut().for_each(|v| *v = 0.0);
                let values = self.execution.map(n, |m| {
                    let mut gm = vec![0.0; nf];
                    let v = self.table.term(m, &w[m * nf..(m + 1) * nf], &mut gm);
                    (v, gm)
                });
                let mut total = 0.0;
                for (m, (v, gm)) in values.into_iter().enumerate() {
                    total += v;
                    g[m * nf..(m + 1) * nf].copy_from_slice(&gm);
                }
                total
            }
        };
        if self.ridge > 0.0 {
            g.iter_mut().zip(w).for_each(|(gi, wi)| *gi += self.ridge * wi);
            value + 0.5 * self.ridge * dot(w, w)
        } else {
            value
        }
    }

    pub fn value(&self, w: &[f64]) -> f64 {
        let mut g = vec![0.0; self.dim()];
        self.value_grad(w, &mut g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{matched_ioc_problem, random_ioc_problem};

    #[test]
    fn matched_dynamics_give_reference_policy_rows() {
        let prob = matched_ioc_problem(4, 3, 25, 1);
        let q = modified_control(&prob).unwrap();
        for (m, o) in prob.observations.iter().enumerate() {
            assert_eq!(q.row(m), prob.reference_policy.row(o.step, o.state));
        }
    }

    #[test]
    fn entries_match_componentwise_composition() {
        let prob = random_ioc_problem(5, 3, 40, 2);
        let q = modified_control(&prob).unwrap();
        for (m, o) in prob.observations.iter().enumerate() {
            for u in 0..3 {
                let p = prob.target.row(1, o.state, u).to_dense(5);
                let r = prob.reference_dynamics.row(1, o.state, u).to_dense(5);
                let kl = crate::prob::kl_slices(&p, &r).finite().unwrap();
                let want = prob.reference_policy.row(1, o.state)[u] * (-kl).exp();
                assert!((q.row(m)[u] - want).abs() <= 1e-14 * want.max(1.0));
            }
        }
    }

    #[test]
    fn zero_weight_value_and_gradient() {
        let prob = random_ioc_problem(5, 3, 30, 7);
        let t = LikelihoodTable::from_problem(&prob, Execution::Sequential).unwrap();
        let obj = Objective { table: &t, mode: WeightMode::Stationary, ridge: 0.0, execution: Execution::Sequential };
        let mut g = vec![0.0; t.n_features()];
        let v = obj.value_grad(&[0.0, 0.0], &mut g);
        let mut want_v = 0.0;
        let mut want_g = vec![0.0; 2];
        for m in 0..t.n_obs() {
            let q: Vec<f64> = t.log_q_hat(m).iter().map(|l| l.exp()).collect();
            let z: f64 = q.iter().sum();
            want_v += z.ln();
            for u in 0..3 {
                for f in 0..2 {
                    want_g[f] += q[u] / z * t.phi(m, u)[f];
                }
            }
            for f in 0..2 {
                want_g[f] -= t.phi(m, t.observed()[m])[f];
            }
        }
        assert!((v - want_v).abs() < 1e-10);
        for f in 0..2 {
            assert!((g[f] - want_g[f]).abs() < 1e-10);
        }
    }

    #[test]
    fn uniform_reference_table_matches_general_construction() {
        let mut prob = random_ioc_problem(5, 3, 30, 11);
        let reference = crate::foc::ReferenceModel::uniform(&prob.target).unwrap();
        prob.reference_dynamics = reference.dynamics;
        prob.reference_policy = reference.policy;
        let general = LikelihoodTable::from_problem(&prob, Execution::Sequential).unwrap();
        let direct = LikelihoodTable::uniform_reference(&prob.target, &prob.features, &prob.observations, Execution::Sequential).unwrap();
        assert_eq!(general.observed(), direct.observed());
        for m in 0..general.n_obs() {
            for (a, b) in general.log_q_hat(m).iter().zip(direct.log_q_hat(m)) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
            for u in 0..3 {
                assert_eq!(general.phi(m, u), direct.phi(m, u));
            }
        }
    }

    #[test]
    fn zero_weight_observed_action_is_rejected() {
        let r = LikelihoodTable::new(2, 1, vec![0.0, f64::NEG_INFINITY], vec![0.0, 1.0], vec![1]);
        assert!(matches!(r, Err(Error::ZeroLikelihood { observation: 0 })));
    }

    #[test]
    fn per_observation_blocks_sum_to_stationary() {
        let prob = random_ioc_problem(5, 3, 20, 3);
        let t = LikelihoodTable::from_problem(&prob, Execution::Sequential).unwrap();
        let w = [0.3, -0.7];
        let stationary = Objective { table: &t, mode: WeightMode::Stationary, ridge: 0.0, execution: Execution::Parallel };
        let stacked = Objective { table: &t, mode: WeightMode::PerObservation, ridge: 0.0, execution: Execution::Parallel };
        let wide: Vec<f64> = (0..t.n_obs()).flat_map(|_| w).collect();
        let mut g1 = vec![0.0; 2];
        let mut g2 = vec![0.0; wide.len()];
        let v1 = stationary.value_grad(&w, &mut g1);
        let v2 = stacked.value_grad(&wide, &mut g2);
        assert!((v1 - v2).abs() < 1e-10);
        for f in 0..2 {
            let s: f64 = g2.chunks(2).map(|c| c[f]).sum();
            assert!((s - g1[f]).abs() < 1e-10);
        }
    }
}
