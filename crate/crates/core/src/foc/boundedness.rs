//! Boundedness diagnostic through the cost-twisted reference.
//!
//! The twisted reference reweights the reference joint by
//! `exp(-sum_k c̃_k(x_{k-1}, u_k))`, with `c̃_k = E_p[c_k] / eps`. Writing
//! `ē` for its normalizer, the objective of any policy equals
//! `eps * (KL(p || q̃) - ln ē)`, which gives a lower bound `-ln ē >= -ē` and,
//! at the twisted policy, an upper bound `sum_k H_k - ln ē`.

use serde::Serialize;

use crate::error::Result;
use crate::kernel::{PolicyKernel, SparseRows, TransitionKernel};
use crate::numeric::{exp_floor, log_sum_exp};
use crate::prob::{kl_slices, ExtendedReal};

use super::ControlProblem;

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Bounded,
    PossiblyUnbounded { factor: String },
}

/// Conditionals of the twisted reference joint.
#[derive(Clone, Debug)]
pub struct TwistedReference {
    pub prior: Vec<f64>,
    pub policy: PolicyKernel,
    pub dynamics: TransitionKernel,
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundednessReport {
    /// `H_0 = KL(p_0 || q̃_0)` followed by `H_k = max_{x,u} KL(p_k || q̃_k)`.
    pub h: Vec<ExtendedReal>,
    pub log_e_bar: f64,
    pub e_bar: f64,
    /// `-eps * ē`.
    pub lower: f64,
    /// `eps * (sum H_k - ln ē)`.
    pub upper: ExtendedReal,
    /// `eps * sum H_k`, which omits the normalizer and fails as an upper bound
    /// whenever `ē < 1`.
    pub upper_unnormalized: ExtendedReal,
    pub verdict: Verdict,
    #[serde(skip)]
    pub twisted: TwistedReference,
}

pub fn check_boundedness(prob: &ControlProblem) -> Result<BoundednessReport> {
    let n = prob.horizon();
    let (ns, na) = (prob.n_states(), prob.n_actions());
    let eps = prob.epsilon();
    let target = prob.target();
    let reference = prob.reference();

    // log beta_k(x), k = N..0
    let mut log_beta = vec![vec![0.0; ns]; n + 1];
    let mut policy_steps = vec![Vec::new(); n];
    let mut dynamics_steps = vec![SparseRows::new(); n];
    for k in (1..=n).rev() {
        let cost = prob.costs().at(k);
        let next = &log_beta[k];
        // ln sum_x' q(x'|x,u) beta_k(x') and ln q(u|x) - c̃_k(x,u) + that, per (x,u)
        let per_state = prob.execution().map(ns, |x| {
            let mut inner = vec![0.0; na];
            let mut weight = vec![0.0; na];
            let q_u = reference.policy.row(k, x);
            for u in 0..na {
                let row = reference.dynamics.row(k, x, u);
                let terms: Vec<f64> = row.iter().map(|(y, q)| q.ln() + next[y]).collect();
                inner[u] = log_sum_exp(&terms);
                weight[u] = if q_u[u] > 0.0 { q_u[u].ln() - target.row(k, x, u).expect(cost) / eps + inner[u] } else { f64::NEG_INFINITY };
            }
            (inner, weight)
        });
        let mut policy = vec![0.0; ns * na];
        let mut rows = SparseRows::new();
        let mut current = vec![0.0; ns];
        for (x, (inner, weight)) in per_state.iter().enumerate() {
            let lb = log_sum_exp(weight);
            current[x] = lb;
            for u in 0..na {
                policy[x * na + u] = exp_floor(weight[u] - lb);
                let row = reference.dynamics.row(k, x, u);
                rows.push_row(row.iter().map(|(y, q)| (y, q * exp_floor(next[y] - inner[u]))))?;
            }
        }
        log_beta[k - 1] = current;
        policy_steps[k - 1] = policy;
        dynamics_steps[k - 1] = rows;
    }

    let prior_logits: Vec<f64> =
        reference.prior.mass().iter().zip(&log_beta[0]).map(|(&q, &b)| if q > 0.0 { q.ln() + b } else { f64::NEG_INFINITY }).collect();
    let log_e_bar = log_sum_exp(&prior_logits);
    let prior: Vec<f64> = prior_logits.iter().map(|&l| exp_floor(l - log_e_bar)).collect();
    let twisted = TwistedReference { policy: renormalized_policy(prob, policy_steps)?, dynamics: renormalized_kernel(prob, dynamics_steps)?, prior };

    let mut h = vec![kl_slices(prob.initial().mass(), &twisted.prior)];
    let mut offending = match h[0] {
        ExtendedReal::Infinite => Some("initial distribution against the twisted prior".to_string()),
        _ => None,
    };
    for k in 1..=n {
        let mut worst = ExtendedReal::Finite(0.0);
        for x in 0..ns {
            for u in 0..na {
                if reference.policy.row(k, x)[u] == 0.0 {
                    continue;
                }
                let d = target.row(k, x, u).kl(&twisted.dynamics.row(k, x, u));
                match (d, worst) {
                    (ExtendedReal::Infinite, ExtendedReal::Finite(_)) => {
                        worst = d;
                        offending.get_or_insert_with(|| format!("step {k}, state {x}, action {u}: target dynamics leave the reference support"));
                    }
                    (ExtendedReal::Finite(a), ExtendedReal::Finite(b)) if a > b => worst = d,
                    _ => {}
                }
            }
        }
        h.push(worst);
    }
    let sum_h = h.iter().fold(ExtendedReal::Finite(0.0), |acc, &v| acc + v);
    let e_bar = log_e_bar.exp();
    let verdict = match offending {
        Some(factor) => Verdict::PossiblyUnbounded { factor },
        None if !e_bar.is_finite() => Verdict::PossiblyUnbounded { factor: "exponential moment overflows".into() },
        None => Verdict::Bounded,
    };
    Ok(BoundednessReport {
        upper: (sum_h + (-log_e_bar)).scale(eps),
        upper_unnormalized: sum_h.scale(eps),
        lower: -eps * e_bar,
        h,
        log_e_bar,
        e_bar,
        verdict,
        twisted,
    })
}

fn renormalized_policy(prob: &ControlProblem, mut steps: Vec<Vec<f64>>) -> Result<PolicyKernel> {
    for t in &mut steps {
        for row in t.chunks_mut(prob.n_actions()) {
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
        }
    }
    PolicyKernel::new(prob.states().clone(), prob.actions().clone(), steps)
}

fn renormalized_kernel(prob: &ControlProblem, steps: Vec<SparseRows>) -> Result<TransitionKernel> {
    let steps = steps
        .into_iter()
        .map(|rows| {
            let mut out = SparseRows::new();
            for r in 0..rows.rows() {
                let row = rows.row(r);
                let s: f64 = row.mass.iter().sum();
                out.push_row(row.iter().map(|(y, m)| (y, m / s)))?;
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    TransitionKernel::new(prob.states().clone(), prob.actions().clone(), steps)
}
