use crate::error::{Error, Result};
use crate::kernel::{CostTable, PolicyKernel, TransitionKernel};
use crate::numeric::{exp_floor, log_sum_exp, softmax_in_place};
use crate::par::Execution;
use crate::prob::{kl_slices, ExtendedReal};

use super::ControlProblem;

/// Output of the backward pass.
///
/// `c_hat[k]` holds `ĉ_k` for `k = 0..=N` (with `ĉ_N = 0`); `c_bar` and
/// `log_modified_prior` are indexed by step `k = 1..=N` through the accessors.
#[derive(Clone, Debug, PartialEq)]
pub struct BackwardTables {
    c_hat: Vec<Vec<f64>>,
    c_bar: Vec<Vec<f64>>,
    log_modified_prior: Vec<Vec<f64>>,
    n_actions: usize,
}

impl BackwardTables {
    pub fn horizon(&self) -> usize {
        self.c_bar.len()
    }

    pub fn c_hat(&self, k: usize) -> &[f64] {
        &self.c_hat[k]
    }

    pub fn c_bar(&self, k: usize) -> &[f64] {
        &self.c_bar[k - 1]
    }

    /// `ln q(u|x) - KL(p(.|x,u) || q(.|x,u))`, `-inf` where the weight is zero.
    pub fn log_modified_prior(&self, k: usize) -> &[f64] {
        &self.log_modified_prior[k - 1]
    }

    /// The unnormalized modified prior `p̄_k(x, u)` laid out `[x][u]`.
    pub fn modified_prior(&self, k: usize) -> Vec<f64> {
        self.log_modified_prior(k).iter().map(|&l| exp_floor(l)).collect()
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }
}

/// `ln q_k(u|x) - KL(p_k(.|x,u) || q_k(.|x,u))` for every `(x, u)`.
fn log_modified_prior(prob: &ControlProblem, k: usize) -> Vec<f64> {
    let (ns, na) = (prob.n_states(), prob.n_actions());
    let target = prob.target();
    let reference = &prob.reference().dynamics;
    let policy = &prob.reference().policy;
    let mut out = vec![0.0; ns * na];
    prob.execution().for_each_chunk(&mut out, na, |x, row| {
        let q_u = policy.row(k, x);
        for u in 0..na {
            row[u] = if q_u[u] > 0.0 { q_u[u].ln() + target.row(k, x, u).kl(&reference.row(k, x, u)).neg_log_weight() } else { f64::NEG_INFINITY };
        }
    });
    out
}

/// Softmax logits `ln p̄_k(x,u) - E_p[c̄_k]` for one state.
fn logits(prob: &ControlProblem, k: usize, x: usize, log_pbar: &[f64], c_bar: &[f64], out: &mut [f64]) {
    let na = out.len();
    for u in 0..na {
        let lp = log_pbar[x * na + u];
        out[u] = if lp == f64::NEG_INFINITY { lp } else { lp - prob.target().row(k, x, u).expect(c_bar) };
    }
}

/// Runs the backward recursion for `ĉ_k`, `c̄_k` and the modified prior.
pub fn backward_recursion(prob: &ControlProblem) -> Result<BackwardTables> {
    let n = prob.horizon();
    let (ns, na) = (prob.n_states(), prob.n_actions());
    let eps = prob.epsilon();
    let mut c_hat = vec![Vec::new(); n + 1];
    let mut c_bar = vec![Vec::new(); n];
    let mut log_pbar = vec![Vec::new(); n];
    c_hat[n] = vec![0.0; ns];
    for k in (1..=n).rev() {
        let cost = prob.costs().at(k);
        let bar: Vec<f64> = cost.iter().zip(&c_hat[k]).map(|(c, h)| c / eps - h).collect();
        let lp = log_modified_prior(prob, k);
        let prev = prob.execution().try_map(ns, |x| {
            let mut buf = vec![0.0; na];
            logits(prob, k, x, &lp, &bar, &mut buf);
            let v = log_sum_exp(&buf);
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::UnnormalizableRow { step: k, state: x })
            }
        })?;
        c_hat[k - 1] = prev;
        c_bar[k - 1] = bar;
        log_pbar[k - 1] = lp;
    }
    Ok(BackwardTables { c_hat, c_bar, log_modified_prior: log_pbar, n_actions: na })
}

/// The optimal randomized policy `π*_k(u|x) ∝ p̄_k(x,u) exp(-E_p[c̄_k])`.
pub fn optimal_policy(prob: &ControlProblem, tables: &BackwardTables) -> Result<PolicyKernel> {
    if tables.horizon() != prob.horizon() || tables.n_actions() != prob.n_actions() {
        return Err(Error::Structure("backward tables do not belong to this problem".into()));
    }
    let (ns, na) = (prob.n_states(), prob.n_actions());
    let mut steps = Vec::with_capacity(prob.horizon());
    for k in 1..=prob.horizon() {
        let mut table = vec![0.0; ns * na];
        let lp = tables.log_modified_prior(k);
        let bar = tables.c_bar(k);
        let failed = std::sync::Mutex::new(None);
        prob.execution().for_each_chunk(&mut table, na, |x, row| {
            logits(prob, k, x, lp, bar, row);
            if softmax_in_place(row).is_none() {
                failed.lock().unwrap().get_or_insert(x);
            }
        });
        if let Some(state) = failed.into_inner().unwrap() {
            return Err(Error::UnnormalizableRow { step: k, state });
        }
        steps.push(table);
    }
    PolicyKernel::new(prob.states().clone(), prob.actions().clone(), steps)
}

fn is_uniform_reference(prob: &ControlProblem) -> bool {
    let (ns, na) = (prob.n_states(), prob.n_actions());
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b;
    (1..=prob.horizon()).all(|k| {
        let policy_ok = prob.reference().policy.at(k).iter().all(|&p| close(p, 1.0 / na as f64));
        let rows = prob.reference().dynamics.at(k);
        let dyn_ok = (0..rows.rows()).all(|r| {
            let row = rows.row(r);
            row.index.len() == ns && row.mass.iter().all(|&m| close(m, 1.0 / ns as f64))
        });
        policy_ok && dyn_ok
    })
}

/// The entropic special case: with uniform reference dynamics and policy,
/// `π*_k(u|x) ∝ exp(-E_p[ln p + c̄_k])`, where the reference enters only
/// through the entropy of the target rows.
pub fn uniform_reference_policy(prob: &ControlProblem) -> Result<PolicyKernel> {
    if !is_uniform_reference(prob) {
        return Err(Error::Invalid("reference dynamics and policy must be uniform".into()));
    }
    entropic_policy(prob.target(), prob.costs(), prob.horizon(), prob.epsilon(), prob.execution())
}

/// [`uniform_reference_policy`] without materializing the uniform
/// reference, which has a dense row per state-action pair.
pub fn entropic_policy(target: &TransitionKernel, costs: &CostTable, horizon: usize, epsilon: f64, exec: Execution) -> Result<PolicyKernel> {
    if horizon == 0 || !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Invalid("horizon must be >= 1 and epsilon positive".into()));
    }
    if costs.states().as_ref() != target.states().as_ref() || !costs.covers(horizon) || !target.covers(horizon) {
        return Err(Error::Structure("cost table and target kernel must share the state grid and cover the horizon".into()));
    }
    let (ns, na) = (target.n_states(), target.n_actions());
    let mut c_hat = vec![0.0; ns];
    let mut steps = vec![Vec::new(); horizon];
    for k in (1..=horizon).rev() {
        let bar: Vec<f64> = costs.at(k).iter().zip(&c_hat).map(|(c, h)| c / epsilon - h).collect();
        let mut table = vec![0.0; ns * na];
        exec.for_each_chunk(&mut table, na, |x, row| {
            for (u, slot) in row.iter_mut().enumerate() {
                let r = target.row(k, x, u);
                *slot = -(r.neg_entropy() + r.expect(&bar));
            }
        });
        c_hat = table.chunks(na).map(log_sum_exp).collect();
        for row in table.chunks_mut(na) {
            softmax_in_place(row).expect("finite logits");
        }
        steps[k - 1] = table;
    }
    PolicyKernel::new(target.states().clone(), target.actions().clone(), steps)
}

/// State marginals `m_0 = p_0, m_k(x') = sum m_{k-1}(x) π_k(u|x) p_k(x'|x,u)`
/// for `k = 0..=N`.
pub fn closed_loop_marginals(prob: &ControlProblem, policy: &PolicyKernel) -> Result<Vec<Vec<f64>>> {
    if !policy.compatible_with(prob.target()) || !policy.covers(prob.horizon()) {
        return Err(Error::Structure("policy does not match the problem".into()));
    }
    let na = prob.n_actions();
    let mut out = vec![prob.initial().mass().to_vec()];
    for k in 1..=prob.horizon() {
        let prev = out.last().unwrap();
        let mut next = vec![0.0; prob.n_states()];
        for (x, &m) in prev.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            for u in 0..na {
                let w = m * policy.row(k, x)[u];
                if w > 0.0 {
                    for (y, p) in prob.target().row(k, x, u).iter() {
                        next[y] += w * p;
                    }
                }
            }
        }
        out.push(next);
    }
    Ok(out)
}

/// The objective `eps * KL(p_{0:N} || q_{0:N}) + sum_k E[c_k(X_k)]` for a
/// given policy, evaluated through the chain rule on closed-loop marginals.
pub fn evaluate_functional(prob: &ControlProblem, policy: &PolicyKernel) -> Result<ExtendedReal> {
    let marginals = closed_loop_marginals(prob, policy)?;
    let na = prob.n_actions();
    let mut kl = kl_slices(prob.initial().mass(), prob.reference().prior.mass());
    let mut cost = 0.0;
    for k in 1..=prob.horizon() {
        let c = prob.costs().at(k);
        for (x, &m) in marginals[k - 1].iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            let pi = policy.row(k, x);
            let q = prob.reference().policy.row(k, x);
            for u in 0..na {
                if pi[u] == 0.0 {
                    continue;
                }
                let w = m * pi[u];
                if q[u] == 0.0 {
                    return Ok(ExtendedReal::Infinite);
                }
                let p_row = prob.target().row(k, x, u);
                let step_kl = p_row.kl(&prob.reference().dynamics.row(k, x, u)) + (pi[u] / q[u]).ln();
                kl = kl + step_kl.scale(w);
                cost += w * p_row.expect(c);
            }
        }
    }
    Ok(kl.scale(prob.epsilon()) + cost)
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimalCost {
    /// `eps * (KL(p_0 || q_0) - E_{p_0}[ĉ_0])`, the minimum of the objective.
    pub value: ExtendedReal,
    /// `-eps * sum_{k=1..N} E_{m_{k-1}}[ĉ_{k-1}]` over the optimal closed-loop
    /// marginals. Equal to `value` only when `N = 1` and `p_0 = q_0`.
    pub nested_stage_sum: f64,
}

pub fn optimal_cost(prob: &ControlProblem, tables: &BackwardTables) -> Result<OptimalCost> {
    let policy = optimal_policy(prob, tables)?;
    let marginals = closed_loop_marginals(prob, &policy)?;
    let eps = prob.epsilon();
    let dot = |m: &[f64], f: &[f64]| -> f64 { m.iter().zip(f).filter(|(a, _)| **a > 0.0).map(|(a, b)| a * b).sum() };
    let p0 = prob.initial().mass();
    let kl0 = kl_slices(p0, prob.reference().prior.mass());
    let value = (kl0 + (-dot(p0, tables.c_hat(0)))).scale(eps);
    let nested = -(1..=prob.horizon()).map(|k| dot(&marginals[k - 1], tables.c_hat(k - 1))).sum::<f64>() * eps;
    Ok(OptimalCost { value, nested_stage_sum: nested })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::foc::ReferenceModel;
    use crate::instances::*;
    use crate::kernel::CostTable;

    #[test]
    fn terminal_correction_is_zero_and_single_step_has_no_recursion() {
        let prob = random_problem(3, 4, 3, 11);
        let t = backward_recursion(&prob).unwrap();
        assert!(t.c_hat(3).iter().all(|&v| v == 0.0));
        let one = random_problem(1, 3, 2, 5);
        let t = backward_recursion(&one).unwrap();
        assert_eq!(t.c_bar(1), one.costs().at(1));
    }

    #[test]
    fn matching_dynamics_and_zero_cost_return_the_reference() {
        let prob = matched_zero_cost_problem(3, 4, 3, 2);
        let t = backward_recursion(&prob).unwrap();
        for k in 0..=3 {
            assert!(t.c_hat(k).iter().all(|v| v.abs() < 1e-15));
        }
        let pi = optimal_policy(&prob, &t).unwrap();
        for k in 1..=3 {
            for (a, b) in pi.at(k).iter().zip(prob.reference().policy.at(k)) {
                assert!((a - b).abs() < 1e-15);
            }
        }
        let cost = optimal_cost(&prob, &t).unwrap();
        assert!(cost.value.finite().unwrap().abs() < 1e-15);
    }

    #[test]
    fn zero_reference_actions_stay_zero() {
        let prob = random_problem_with_zero_action(3, 4, 3, 9);
        let pi = optimal_policy(&prob, &backward_recursion(&prob).unwrap()).unwrap();
        for k in 1..=3 {
            for x in 0..4 {
                assert_eq!(pi.row(k, x)[0] == 0.0, prob.reference().policy.row(k, x)[0] == 0.0);
            }
        }
    }

    #[test]
    fn single_step_single_state_cost_by_hand() {
        let prob = random_problem(1, 1, 3, 4);
        let t = backward_recursion(&prob).unwrap();
        let c = prob.costs().at(1)[0];
        let expected = -(0..3)
            .map(|u| {
                let kl = prob.target().row(1, 0, u).kl(&prob.reference().dynamics.row(1, 0, u)).finite().unwrap();
                prob.reference().policy.row(1, 0)[u] * (-kl - c).exp()
            })
            .sum::<f64>()
            .ln();
        let got = optimal_cost(&prob, &t).unwrap().value.finite().unwrap();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn closed_form_matches_direct_evaluation() {
        for seed in 0..20 {
            let prob = random_problem(3, 4, 3, seed).with_initial(random_distribution(4, seed + 100)).unwrap();
            let t = backward_recursion(&prob).unwrap();
            let pi = optimal_policy(&prob, &t).unwrap();
            let direct = evaluate_functional(&prob, &pi).unwrap().finite().unwrap();
            let closed = optimal_cost(&prob, &t).unwrap().value.finite().unwrap();
            assert!((direct - closed).abs() < 1e-10, "seed {seed}: {direct} vs {closed}");
        }
    }

    #[test]
    fn uniform_variant_agrees_with_general_path() {
        for seed in 0..5 {
            let base = random_problem(3, 4, 3, seed);
            let reference = ReferenceModel::uniform(base.target()).unwrap();
            let prob = ControlProblem::new(3, base.target().clone(), reference, base.costs().clone()).unwrap();
            let general = optimal_policy(&prob, &backward_recursion(&prob).unwrap()).unwrap();
            let special = uniform_reference_policy(&prob).unwrap();
            for k in 1..=3 {
                for (a, b) in general.at(k).iter().zip(special.at(k)) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
        assert!(uniform_reference_policy(&random_problem(2, 3, 2, 1)).is_err());
    }

    #[test]
    fn entropic_policy_matches_uniform_variant() {
        let base = random_problem(2, 5, 3, 4);
        let reference = ReferenceModel::uniform(base.target()).unwrap();
        let prob = ControlProblem::new(2, base.target().clone(), reference, base.costs().clone()).unwrap();
        let direct = entropic_policy(base.target(), base.costs(), 2, 1.0, crate::Execution::Sequential).unwrap();
        assert_eq!(direct, uniform_reference_policy(&prob).unwrap());
        assert!(entropic_policy(base.target(), base.costs(), 0, 1.0, crate::Execution::Sequential).is_err());
    }

    #[test]
    fn uniform_variant_with_deterministic_dynamics_and_zero_cost_is_uniform() {
        let prob = deterministic_uniform_problem(2, 4, 3);
        let prob = ControlProblem::new(2, prob.target().clone(), prob.reference().clone(), CostTable::zeros(prob.states().clone())).unwrap();
        let pi = uniform_reference_policy(&prob).unwrap();
        assert!(pi.steps().iter().flatten().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn execution_modes_are_bit_identical() {
        let prob = random_problem(3, 6, 3, 21);
        let a = backward_recursion(&prob.clone().with_execution(crate::Execution::Sequential)).unwrap();
        let b = backward_recursion(&prob.with_execution(crate::Execution::Parallel)).unwrap();
        assert_eq!(a, b);
    }
}
