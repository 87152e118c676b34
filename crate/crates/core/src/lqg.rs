//! Closed-form policy for linear-Gaussian dynamics, quadratic cost and
//! Gaussian references.
//!
//! Model: `p(x_k | x_{k-1}, u_k) = N(A x + B u, Σ)`, reference dynamics
//! `q(x_k) = N(x_d, R)`, reference policy `q(u_k) = N(u_d, Q)` and stage cost
//! `0.5 (x - x_c)^T W (x - x_c)` with `x_c = x_d` unless a separate cost
//! center is given. The cost-to-go is quadratic,
//! `-ĉ_k(x) = 0.5 x^T S_k x - s_k^T x + v_k`, and the optimal policy at step
//! `k` is `N(μ*_k(x), Σ*_k)` with
//!
//! ```text
//! S̄_k = S_k + R^-1 + W,         Σ*_k = (Q^-1 + B^T S̄_k B)^-1
//! b_k = R^-1 x_d + W x_c + s_k,  μ*_k(x) = Σ*_k (B^T b_k + Q^-1 u_d - B^T S̄_k A x)
//! S_{k-1} = A^T (S̄_k - S̄_k B Σ*_k B^T S̄_k) A
//! s_{k-1} = A^T (b_k - S̄_k B Σ*_k (B^T b_k + Q^-1 u_d))
//! ```
//!
//! starting from `S_N = 0`, `s_N = 0`. When `A x_d = x_d`, `u_d = 0` and
//! `x_c = x_d`, the linear term satisfies `s_k = S_k x_d`, so `b_k = S̄_k x_d`
//! and the mean reduces to `Σ*_k (B^T S̄_k x_d - B^T S̄_k A x)`; see
//! [`LqgRecursionState::centered_mean`].

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::grid::GridSpace;
use crate::kernel::SparseRows;

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianLinearModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub x_d: DVector<f64>,
    pub u_d: DVector<f64>,
    /// Center of the quadratic cost; `None` means `x_d`.
    pub cost_center: Option<DVector<f64>>,
    pub horizon: usize,
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

fn chol(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    m.clone().cholesky().ok_or_else(|| Error::Numerical(format!("{what} is not positive definite")))
}

/// `M^-1` through a Cholesky solve.
fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let mut inv = chol(m, what)?.inverse();
    symmetrize(&mut inv);
    Ok(inv)
}

impl GaussianLinearModel {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn p(&self) -> usize {
        self.b.ncols()
    }

    pub fn cost_center(&self) -> &DVector<f64> {
        self.cost_center.as_ref().unwrap_or(&self.x_d)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, p) = (self.n(), self.p());
        let shape_ok = self.a.shape() == (n, n)
            && self.b.nrows() == n
            && self.sigma.shape() == (n, n)
            && self.w.shape() == (n, n)
            && self.r.shape() == (n, n)
            && self.q.shape() == (p, p)
            && self.x_d.len() == n
            && self.u_d.len() == p
            && self.cost_center.as_ref().is_none_or(|c| c.len() == n);
        if !shape_ok || n == 0 || p == 0 {
            return Err(Error::Structure("model matrices have inconsistent shapes".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Invalid("horizon must be at least 1".into()));
        }
        let all = [&self.a, &self.b, &self.sigma, &self.w, &self.r, &self.q];
        if all.iter().any(|m| m.iter().any(|v| !v.is_finite())) {
            return Err(Error::Invalid("model contains non-finite entries".into()));
        }
        for (m, name) in [(&self.sigma, "Σ"), (&self.r, "R"), (&self.q, "Q"), (&self.w, "W")] {
            if (m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) {
                return Err(Error::Invalid(format!("{name} must be symmetric")));
            }
        }
        for (m, name) in [(&self.sigma, "Σ"), (&self.r, "R"), (&self.q, "Q")] {
            chol(m, name).map_err(|_| Error::Invalid(format!("{name} must be positive definite")))?;
        }
        let eig = self.w.clone().symmetric_eigenvalues();
        if eig.iter().any(|&e| e < -1e-12 * self.w.amax().max(1.0)) {
            return Err(Error::Invalid("W must be positive semidefinite".into()));
        }
        Ok(())
    }
}

/// Per-step quantities of the backward pass, for `k = 1..=N`.
#[derive(Clone, Debug, PartialEq)]
pub struct LqgStep {
    pub s_bar: DMatrix<f64>,
    pub sigma_star: DMatrix<f64>,
    /// `Σ*_k B^T S̄_k A`, so that `μ*_k(x) = offset - gain x`.
    pub gain: DMatrix<f64>,
    pub offset: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LqgRecursionState {
    /// `S_k` for `k = 0..=N`.
    pub s: Vec<DMatrix<f64>>,
    /// `s_k` (linear cost-to-go term) for `k = 0..=N`.
    pub linear: Vec<DVector<f64>>,
    /// Constant cost-to-go term `v_k` for `k = 0..=N`.
    pub constant: Vec<f64>,
    /// `ω_k` for `k = 0..=N` by the transcribed offset recursion; it never
    /// feeds the policy.
    pub omega: Vec<f64>,
    steps: Vec<LqgStep>,
    x_d: DVector<f64>,
    u_d: DVector<f64>,
    b: DMatrix<f64>,
    a: DMatrix<f64>,
    q_inv: DMatrix<f64>,
}

pub fn lqg_recursion(model: &GaussianLinearModel) -> Result<LqgRecursionState> {
    model.validate()?;
    let (n, big_n) = (model.n(), model.horizon);
    let r_inv = spd_inverse(&model.r, "R")?;
    let q_inv = spd_inverse(&model.q, "Q")?;
    let (a, b, w) = (&model.a, &model.b, &model.w);
    let x_c = model.cost_center();
    let sigma = &model.sigma;
    let base = &r_inv + w;
    let anchor = &r_inv * &model.x_d + w * x_c;
    let ln_det_ratio = chol(&model.r, "R")?.ln_determinant() - chol(sigma, "Σ")?.ln_determinant();
    let kl_const = 0.5 * ((&r_inv * sigma).trace() - n as f64 + ln_det_ratio);
    let fixed = 0.5 * model.x_d.dot(&(&r_inv * &model.x_d)) + kl_const + 0.5 * x_c.dot(&(w * x_c)) + 0.5 * model.u_d.dot(&(&q_inv * &model.u_d));
    let sqrt_q = chol(&model.q, "Q")?.l();
    let omega_drift = model.x_d.dot(&(&base * &model.x_d)) + model.u_d.dot(&(&q_inv * &model.u_d)) + (&r_inv * sigma).trace() + (w * sigma).trace();
    let omega_vec = b.transpose() * &r_inv * &model.x_d + &q_inv * &model.u_d;

    let mut s = vec![DMatrix::zeros(n, n); big_n + 1];
    let mut linear = vec![DVector::zeros(n); big_n + 1];
    let mut constant = vec![0.0; big_n + 1];
    let mut omega = vec![0.0; big_n + 1];
    let mut steps = Vec::with_capacity(big_n);
    for k in (1..=big_n).rev() {
        let mut s_bar = &s[k] + &base;
        symmetrize(&mut s_bar);
        let bt_sbar = b.transpose() * &s_bar;
        let mut precision = &q_inv + &bt_sbar * b;
        symmetrize(&mut precision);
        let factor = chol(&precision, &format!("Q^-1 + B^T S̄ B at step {k}"))?;
        let mut sigma_star = factor.inverse();
        symmetrize(&mut sigma_star);
        let b_k = &anchor + &linear[k];
        let beta = b.transpose() * &b_k + &q_inv * &model.u_d;
        let gain = factor.solve(&(&bt_sbar * a));
        let offset = factor.solve(&beta);

        let sb_b = &s_bar * b;
        let mut next = a.transpose() * (&s_bar - &sb_b * factor.solve(&sb_b.transpose())) * a;
        symmetrize(&mut next);
        linear[k - 1] = a.transpose() * (&b_k - &sb_b * &offset);
        let ln_det = (DMatrix::identity(model.p(), model.p()) + &model.q * b.transpose() * &s_bar * b).determinant().ln();
        constant[k - 1] = 0.5 * ln_det - 0.5 * beta.dot(&offset) + fixed + 0.5 * ((w + &s[k]) * sigma).trace() + constant[k];

        let bq = b * &sqrt_q;
        let ln_det_omega = (DMatrix::identity(model.p(), model.p()) + bq.transpose() * &s_bar * &bq).determinant().ln();
        omega[k - 1] = ln_det_omega + omega[k] + (&s[k] * sigma).trace() + omega_drift + omega_vec.dot(&(&sigma_star * &omega_vec));
        s[k - 1] = next;
        steps.push(LqgStep { s_bar, sigma_star, gain, offset });
    }
    steps.reverse();
    Ok(LqgRecursionState { s, linear, constant, omega, steps, x_d: model.x_d.clone(), u_d: model.u_d.clone(), b: b.clone(), a: a.clone(), q_inv })
}

impl LqgRecursionState {
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn step(&self, k: usize) -> &LqgStep {
        &self.steps[k - 1]
    }

    /// Mean and covariance of `π*_k(.|x_{k-1})`.
    pub fn policy(&self, k: usize, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let st = self.step(k);
        (&st.offset - &st.gain * x, st.sigma_star.clone())
    }

    /// `Σ*_k (B^T S̄_k x_d + Q^-1 u_d) - Σ*_k B^T S̄_k A x`, the mean written
    /// around `x_d`. It coincides with [`Self::policy`] when `A x_d = x_d`,
    /// `u_d = 0` and the cost is centered at `x_d`.
    pub fn centered_mean(&self, k: usize, x: &DVector<f64>) -> DVector<f64> {
        let st = self.step(k);
        let rhs = self.b.transpose() * &st.s_bar * &self.x_d + &self.q_inv * &self.u_d;
        &st.sigma_star * (rhs - self.b.transpose() * &st.s_bar * &self.a * x)
    }

    /// Optimal objective from a fixed start, `-ĉ_0(x_0)`.
    pub fn value(&self, x0: &DVector<f64>) -> f64 {
        self.cost_to_go(0, x0)
    }

    /// `-ĉ_k(x) = 0.5 x^T S_k x - s_k^T x + v_k`.
    pub fn cost_to_go(&self, k: usize, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.s[k] * x)) - self.linear[k].dot(x) + self.constant[k]
    }

    /// `E_{N(m, Σ)}[ĉ_k(X)]` for next-state mean `m`.
    pub fn expected_correction(&self, k: usize, mean: &DVector<f64>, sigma: &DMatrix<f64>) -> f64 {
        -(self.cost_to_go(k, mean) + 0.5 * (&self.s[k] * sigma).trace())
    }
}

/// `N(mean, cov)` sample using a precomputed lower Cholesky factor.
pub fn sample_gaussian<R: Rng + ?Sized>(mean: &DVector<f64>, chol_l: &DMatrix<f64>, rng: &mut R) -> DVector<f64> {
    let z = DVector::from_iterator(mean.len(), (0..mean.len()).map(|_| StandardNormal.sample(rng)));
    mean + chol_l * z
}

/// Lower Cholesky factor of a positive-definite matrix.
pub fn cholesky_lower(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(chol(m, "covariance")?.l())
}

/// A Gaussian binned onto `grid`: density at cell centers inside a box of
/// `±width` standard deviations, normalized to one. The cell nearest to
/// the mean is always included.
pub fn gaussian_row(grid: &GridSpace, mean: &[f64], precision: &DMatrix<f64>, std: &[f64], width: f64) -> Vec<(usize, f64)> {
    let axes = grid.axes();
    let ranges: Vec<(usize, usize)> =
        axes.iter().zip(mean.iter().zip(std)).map(|(a, (&m, &s))| (a.bin(m - width * s), a.bin(m + width * s))).collect();
    let mut cells = Vec::new();
    let mut idx: Vec<usize> = ranges.iter().map(|r| r.0).collect();
    let mut center = vec![0.0; mean.len()];
    let mut d = DVector::zeros(mean.len());
    loop {
        for (i, a) in axes.iter().enumerate() {
            center[i] = a.center(idx[i]);
            d[i] = center[i] - mean[i];
        }
        let e = -0.5 * d.dot(&(precision * &d));
        cells.push((grid.flat(&idx), e));
        let mut pos = idx.len();
        loop {
            if pos == 0 {
                let max = cells.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
                let mut out: Vec<(usize, f64)> = cells.iter().map(|&(c, e)| (c, crate::numeric::exp_floor(e - max))).collect();
                let total: f64 = out.iter().map(|c| c.1).sum();
                out.iter_mut().for_each(|c| c.1 /= total);
                out.retain(|c| c.1 > 0.0);
                out.sort_by_key(|c| c.0);
                return out;
            }
            pos -= 1;
            if idx[pos] < ranges[pos].1 {
                idx[pos] += 1;
                break;
            }
            idx[pos] = ranges[pos].0;
        }
    }
}

/// Tabular version of a scalar model on the given grids (one state and one
/// action coordinate). Used to cross-check the closed form.
pub fn tabulate_scalar(
    model: &GaussianLinearModel,
    states: std::sync::Arc<GridSpace>,
    actions: std::sync::Arc<GridSpace>,
) -> Result<crate::foc::ControlProblem> {
    use crate::foc::{ControlProblem, ReferenceModel};
    use crate::kernel::{CostTable, PolicyKernel, TransitionKernel};
    use crate::prob::DiscreteDistribution;
    model.validate()?;
    if model.n() != 1 || model.p() != 1 || states.dims() != 1 || actions.dims() != 1 {
        return Err(Error::Structure("tabulation is implemented for scalar models on 1-D grids".into()));
    }
    let (a, b, sig, r, q) = (model.a[(0, 0)], model.b[(0, 0)], model.sigma[(0, 0)], model.r[(0, 0)], model.q[(0, 0)]);
    let prec = |v: f64| DMatrix::from_element(1, 1, 1.0 / v);
    let row = |grid: &GridSpace, m: f64, v: f64| gaussian_row(grid, &[m], &prec(v), &[v.sqrt()], 8.0);
    let ref_row = row(&states, model.x_d[0], r);
    let mut target = SparseRows::new();
    let mut reference = SparseRows::new();
    for x in 0..states.len() {
        let xc = states.center(x)[0];
        for u in 0..actions.len() {
            let uc = actions.center(u)[0];
            target.push_row(row(&states, a * xc + b * uc, sig))?;
            reference.push_row(ref_row.iter().copied())?;
        }
    }
    let mut policy_row = vec![0.0; actions.len()];
    for (c, m) in row(&actions, model.u_d[0], q) {
        policy_row[c] = m;
    }
    let policy: Vec<f64> = (0..states.len()).flat_map(|_| policy_row.iter().copied()).collect();
    let x_c = model.cost_center()[0];
    let w = model.w[(0, 0)];
    let costs = CostTable::from_fn(states.clone(), |x| 0.5 * w * (x[0] - x_c).powi(2))?;
    let target = TransitionKernel::stationary(states.clone(), actions.clone(), target)?;
    let reference = ReferenceModel {
        prior: DiscreteDistribution::uniform(states.clone()),
        dynamics: TransitionKernel::stationary(states.clone(), actions.clone(), reference)?,
        policy: PolicyKernel::new(states, actions, vec![policy])?,
    };
    ControlProblem::new(model.horizon, target, reference, costs)
}

/// Scalar model helper: every matrix is `1 x 1`.
#[allow(clippy::too_many_arguments)]
pub fn scalar_model(a: f64, b: f64, sigma: f64, w: f64, r: f64, q: f64, x_d: f64, u_d: f64, horizon: usize) -> GaussianLinearModel {
    let m = |v: f64| DMatrix::from_element(1, 1, v);
    GaussianLinearModel {
        a: m(a),
        b: m(b),
        sigma: m(sigma),
        w: m(w),
        r: m(r),
        q: m(q),
        x_d: DVector::from_element(1, x_d),
        u_d: DVector::from_element(1, u_d),
        cost_center: None,
        horizon,
    }
}
