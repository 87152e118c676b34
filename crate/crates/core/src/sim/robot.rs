//! Single-integrator robot on a bounded work area.
//!
//! `x' ~ N(x + u dt, Σ)` with velocity components clamped to the speed bound.
//! Two set-ups are provided: an obstacle-free one driven by the closed-form
//! Gaussian policy, and a tabular one with Gaussian-bump obstacles and
//! uniform references.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::Dataset;
use crate::foc::entropic_policy;
use crate::grid::{Axis, GridSpace};
use crate::ioc::{Feature, LikelihoodTable, NamedFeature};
use crate::kernel::{CostTable, PolicyKernel, SparseRows, TransitionKernel};
use crate::lqg::{cholesky_lower, gaussian_row, sample_gaussian, GaussianLinearModel, LqgRecursionState};
use crate::par::Execution;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobotParams {
    pub dt: f64,
    /// `[x_min, x_max, y_min, y_max]`.
    pub area: [f64; 4],
    pub speed_bound: f64,
    pub noise: [[f64; 2]; 2],
    pub goal: [f64; 2],
    pub obstacles: Vec<[f64; 2]>,
    pub obstacle_covariance: [[f64; 2]; 2],
    /// Radius of the disk around each obstacle that trajectories must avoid.
    pub obstacle_radius: f64,
    pub goal_weight: f64,
    pub obstacle_weight: f64,
    pub boundary_weight: f64,
    pub boundary_margin: f64,
    pub goal_tolerance: f64,
    /// Side of a state cell for the tabular model.
    pub cell: f64,
    /// Per-axis action count for the tabular model.
    pub action_bins: usize,
}

impl Default for RobotParams {
    fn default() -> Self {
        RobotParams {
            dt: 0.033,
            area: [-1.5, 1.5, -1.0, 1.0],
            speed_bound: 0.5,
            noise: [[0.001, 0.0002], [0.0002, 0.001]],
            goal: [-1.4, -0.9],
            obstacles: vec![[0.0, 0.0], [-0.7, -0.9]],
            obstacle_covariance: [[0.02, 0.0], [0.0, 0.02]],
            obstacle_radius: 0.1,
            goal_weight: 30.0,
            obstacle_weight: 20.0,
            boundary_weight: 10.0,
            boundary_margin: 0.1,
            goal_tolerance: 0.1,
            cell: 0.05,
            action_bins: 5,
        }
    }
}

fn mat2(m: &[[f64; 2]; 2]) -> Matrix2<f64> {
    Matrix2::new(m[0][0], m[0][1], m[1][0], m[1][1])
}

impl RobotParams {
    pub fn validate(&self) -> Result<()> {
        let [x0, x1, y0, y1] = self.area;
        if !(x0 < x1 && y0 < y1) {
            return Err(Error::Invalid("work area bounds must be increasing".into()));
        }
        if !(self.dt > 0.0 && self.speed_bound > 0.0 && self.cell > 0.0 && self.action_bins > 0) {
            return Err(Error::Invalid("dt, speed bound, cell size and action bins must be positive".into()));
        }
        let n = mat2(&self.noise);
        if n != Matrix2::zeros() && (n != n.transpose() || n.cholesky().is_none()) {
            return Err(Error::Invalid("noise covariance must be symmetric positive definite (or zero)".into()));
        }
        let o = mat2(&self.obstacle_covariance);
        if o != o.transpose() || o.cholesky().is_none() {
            return Err(Error::Invalid("obstacle covariance must be symmetric positive definite".into()));
        }
        if !self.inside(self.goal) {
            return Err(Error::Invalid("goal lies outside the work area".into()));
        }
        Ok(())
    }

    pub fn inside(&self, x: [f64; 2]) -> bool {
        let [x0, x1, y0, y1] = self.area;
        (x0..=x1).contains(&x[0]) && (y0..=y1).contains(&x[1])
    }

    pub fn clamp_action(&self, u: [f64; 2]) -> [f64; 2] {
        let b = self.speed_bound;
        [u[0].clamp(-b, b), u[1].clamp(-b, b)]
    }

    /// Tabular state grid with cells of side about `cell`.
    pub fn state_grid(&self) -> Result<Arc<GridSpace>> {
        let [x0, x1, y0, y1] = self.area;
        let bins = |lo: f64, hi: f64| ((hi - lo) / self.cell).round().max(1.0) as usize;
        Ok(Arc::new(GridSpace::new(vec![Axis::new(x0, x1, bins(x0, x1))?, Axis::new(y0, y1, bins(y0, y1))?])?))
    }

    /// `action_bins` per axis with the outer centers on the speed bound.
    pub fn action_grid(&self, bins: usize) -> Result<Arc<GridSpace>> {
        let b = self.speed_bound;
        let axis = if bins == 1 {
            Axis::new(-b, b, 1)?
        } else {
            let half = b / (bins - 1) as f64;
            Axis::new(-b - half, b + half, bins)?
        };
        Ok(Arc::new(GridSpace::new(vec![axis, axis])?))
    }
}

/// `x' ~ N(x + u dt, Σ)` after clamping `u`.
pub fn robot_step<R: Rng + ?Sized>(params: &RobotParams, x: [f64; 2], u: [f64; 2], rng: &mut R) -> [f64; 2] {
    let u = params.clamp_action(u);
    let mean = [x[0] + u[0] * params.dt, x[1] + u[1] * params.dt];
    let cov = mat2(&params.noise);
    if cov == Matrix2::zeros() {
        return mean;
    }
    let l = cov.cholesky().expect("validated noise covariance").l();
    let z = Vector2::new(StandardNormal.sample(rng), StandardNormal.sample(rng));
    let w = l * z;
    [mean[0] + w[0], mean[1] + w[1]]
}

/// Bivariate Gaussian density `N(x; center, cov)`.
pub fn gaussian_bump(x: [f64; 2], center: [f64; 2], cov: &[[f64; 2]; 2]) -> f64 {
    let c = mat2(cov);
    let d = Vector2::new(x[0] - center[0], x[1] - center[1]);
    let inv = c.try_inverse().expect("positive-definite covariance");
    (-0.5 * d.dot(&(inv * d))).exp() / (2.0 * std::f64::consts::PI * c.determinant().sqrt())
}

/// `Σ_walls max(0, margin - distance)²`; zero at least `margin` inside.
pub fn boundary_penalty(params: &RobotParams, x: [f64; 2]) -> f64 {
    let [x0, x1, y0, y1] = params.area;
    let m = params.boundary_margin;
    [x[0] - x0, x1 - x[0], x[1] - y0, y1 - x[1]].iter().map(|d| (m - d).max(0.0).powi(2)).sum()
}

/// `w_goal ||x - x_d||² + w_obs Σ_i g_i(x) + w_b b(x)`.
pub fn obstacle_cost(params: &RobotParams, x: [f64; 2]) -> f64 {
    let d2 = (x[0] - params.goal[0]).powi(2) + (x[1] - params.goal[1]).powi(2);
    let bumps: f64 = params.obstacles.iter().map(|o| gaussian_bump(x, *o, &params.obstacle_covariance)).sum();
    params.goal_weight * d2 + params.obstacle_weight * bumps + params.boundary_weight * boundary_penalty(params, x)
}

/// 5 x 3 lattice spanning the work area, inset so that the goal corner is
/// one of the points.
pub fn basis_points() -> Vec<[f64; 2]> {
    let xs = [-1.4, -0.7, 0.0, 0.7, 1.4];
    let ys = [-0.9, 0.0, 0.9];
    xs.iter().flat_map(|&x| ys.iter().map(move |&y| [x, y])).collect()
}

/// Start positions used for data collection.
pub fn start_positions() -> Vec<[f64; 2]> {
    vec![[1.3, 0.8], [1.3, -0.8], [-1.3, 0.8], [0.0, 0.8]]
}

/// Start positions used to re-validate reconstructed costs.
pub fn validation_starts() -> Vec<[f64; 2]> {
    vec![[1.0, 0.4], [0.6, -0.6], [-0.9, 0.6], [1.4, 0.0]]
}

/// `(x - o_i)^T (x - o_i)` for every basis point.
pub fn quadratic_features() -> Vec<NamedFeature> {
    basis_points()
        .iter()
        .enumerate()
        .map(|(i, o)| NamedFeature { name: format!("quad_{i}"), feature: Feature::QuadraticToPoint { point: o.to_vec() } })
        .collect()
}

/// `||x - x_d||²` followed by a Gaussian bump at every basis point.
pub fn obstacle_features(params: &RobotParams) -> Vec<NamedFeature> {
    let cov: Vec<Vec<f64>> = params.obstacle_covariance.iter().map(|r| r.to_vec()).collect();
    let mut out = vec![NamedFeature { name: "goal".into(), feature: Feature::QuadraticToPoint { point: params.goal.to_vec() } }];
    out.extend(
        basis_points()
            .iter()
            .enumerate()
            .map(|(i, o)| NamedFeature { name: format!("bump_{i}"), feature: Feature::GaussianBump { center: o.to_vec(), covariance: cov.clone() } }),
    );
    out
}

/// Obstacle-free model: `A = I`, `B = dt I`, `R = 0.003 I`, `Q = 0.007 I`,
/// cost `0.5 ||x - x_d||²`.
pub fn scenario1_model(params: &RobotParams, horizon: usize) -> GaussianLinearModel {
    let eye = DMatrix::<f64>::identity(2, 2);
    GaussianLinearModel {
        a: eye.clone(),
        b: &eye * params.dt,
        sigma: DMatrix::from_row_slice(2, 2, &[params.noise[0][0], params.noise[0][1], params.noise[1][0], params.noise[1][1]]),
        w: eye.clone(),
        r: &eye * 0.003,
        q: &eye * 0.007,
        x_d: DVector::from_row_slice(&params.goal),
        u_d: DVector::zeros(2),
        cost_center: None,
        horizon,
    }
}

/// Quadratic cost `Σ_i -w_i ||x - o_i||²` rewritten as
/// `0.5 (x - c)^T W (x - c) + const` for the closed form.
pub fn quadratic_cost_model(base: &GaussianLinearModel, points: &[[f64; 2]], w: &[f64]) -> Result<GaussianLinearModel> {
    let total: f64 = w.iter().sum();
    if !(total < 0.0) {
        return Err(Error::Invalid("reconstructed quadratic cost must have positive curvature".into()));
    }
    let mut center = DVector::zeros(2);
    for (o, wi) in points.iter().zip(w) {
        center += DVector::from_row_slice(o) * (*wi / total);
    }
    Ok(GaussianLinearModel { w: DMatrix::identity(2, 2) * (-2.0 * total), cost_center: Some(center), horizon: 1, ..base.clone() })
}

/// Likelihood of observed robot moves under the greedy Gaussian model with
/// actions restricted to a `bins x bins` grid: `ln q̂` uses the analytic
/// dynamics KL and the reference input density at the action centers, and
/// the features are `E ||x' - o_i||² = ||x + B u - o_i||² + tr Σ`.
pub fn scenario1_likelihood(
    model: &GaussianLinearModel,
    points: &[[f64; 2]],
    runs: &[Dataset],
    actions: &GridSpace,
    exec: Execution,
) -> Result<LikelihoodTable> {
    model.validate()?;
    let r_inv = model.r.clone().cholesky().ok_or_else(|| Error::Numerical("R is not positive definite".into()))?.inverse();
    let q_inv = model.q.clone().cholesky().ok_or_else(|| Error::Numerical("Q is not positive definite".into()))?.inverse();
    let n = model.n() as f64;
    let trace_sigma = model.sigma.trace();
    let kl_const = 0.5 * ((&r_inv * &model.sigma).trace() - n + (model.r.determinant() / model.sigma.determinant()).ln());
    let centers: Vec<DVector<f64>> = (0..actions.len()).map(|a| DVector::from_vec(actions.center(a))).collect();
    let log_q_u: Vec<f64> = {
        let logits: Vec<f64> = centers
            .iter()
            .map(|u| {
                let d = u - &model.u_d;
                -0.5 * d.dot(&(&q_inv * &d))
            })
            .collect();
        let lse = crate::numeric::log_sum_exp(&logits);
        logits.iter().map(|l| l - lse).collect()
    };
    let pairs: Vec<(Vec<f64>, Vec<f64>)> =
        runs.iter().flat_map(|ds| (1..=ds.len()).map(move |k| (ds.pair(k).0.to_vec(), ds.pair(k).1.to_vec()))).collect();
    let (na, nf) = (actions.len(), points.len());
    let rows = exec.map(pairs.len(), |m| {
        let x = DVector::from_row_slice(&pairs[m].0);
        let ax = &model.a * &x;
        let mut lq = Vec::with_capacity(na);
        let mut phi = Vec::with_capacity(na * nf);
        for (a, u) in centers.iter().enumerate() {
            let mean = &ax + &model.b * u;
            let d = &mean - &model.x_d;
            lq.push(log_q_u[a] - (kl_const + 0.5 * d.dot(&(&r_inv * &d))));
            for o in points {
                phi.push((mean[0] - o[0]).powi(2) + (mean[1] - o[1]).powi(2) + trace_sigma);
            }
        }
        (lq, phi, actions.index_of(&pairs[m].1))
    });
    let mut log_q_hat = Vec::with_capacity(pairs.len() * na);
    let mut phi = Vec::with_capacity(pairs.len() * na * nf);
    let mut observed = Vec::with_capacity(pairs.len());
    for (lq, p, o) in rows {
        log_q_hat.extend(lq);
        phi.extend(p);
        observed.push(o);
    }
    LikelihoodTable::new(na, nf, log_q_hat, phi, observed)
}

/// Binned `N(x + u dt, Σ)` rows for every state cell center and action.
pub fn scenario2_kernel(params: &RobotParams, states: Arc<GridSpace>, actions: Arc<GridSpace>, exec: Execution) -> Result<TransitionKernel> {
    params.validate()?;
    let cov = mat2(&params.noise);
    let precision = cov.try_inverse().ok_or_else(|| Error::Invalid("tabular robot model needs a nonzero noise covariance".into()))?;
    let precision = DMatrix::from_row_slice(2, 2, precision.as_slice()).transpose();
    let std = [cov[(0, 0)].sqrt(), cov[(1, 1)].sqrt()];
    let na = actions.len();
    let rows = exec.map(states.len() * na, |r| {
        let x = states.center(r / na);
        let u = actions.center(r % na);
        let mean = [x[0] + u[0] * params.dt, x[1] + u[1] * params.dt];
        gaussian_row(&states, &mean, &precision, &std, 4.0)
    });
    let mut sparse = SparseRows::new();
    for row in rows {
        sparse.push_row(row)?;
    }
    TransitionKernel::stationary(states, actions, sparse)
}

/// Greedy policy under uniform reference dynamics and inputs.
pub fn scenario2_policy(kernel: &TransitionKernel, costs: &CostTable, exec: Execution) -> Result<PolicyKernel> {
    entropic_policy(kernel, costs, 1, 1.0, exec)
}

pub fn scenario2_costs(params: &RobotParams, states: Arc<GridSpace>) -> Result<CostTable> {
    CostTable::from_fn(states, |x| obstacle_cost(params, [x[0], x[1]]))
}

/// Positions, applied velocities and outcome of one closed-loop run.
#[derive(Clone, Debug, PartialEq)]
pub struct RobotRun {
    pub states: Vec<[f64; 2]>,
    pub actions: Vec<[f64; 2]>,
    /// First step within the goal tolerance.
    pub reached: Option<usize>,
    /// Number of visited positions inside an obstacle disk.
    pub collisions: usize,
}

impl RobotRun {
    pub fn to_dataset(&self) -> Result<Dataset> {
        Dataset::new(self.states.iter().map(|x| x.to_vec()).collect(), self.actions.iter().map(|u| u.to_vec()).collect())
    }
}

pub fn in_obstacle(params: &RobotParams, x: [f64; 2]) -> bool {
    params.obstacles.iter().any(|o| (x[0] - o[0]).powi(2) + (x[1] - o[1]).powi(2) < params.obstacle_radius.powi(2))
}

pub fn at_goal(params: &RobotParams, x: [f64; 2]) -> bool {
    (x[0] - params.goal[0]).hypot(x[1] - params.goal[1]) < params.goal_tolerance
}

/// Runs `control(k, x, rng)` for up to `max_steps`; stops at the goal when
/// `stop_at_goal` is set.
pub fn robot_closed_loop<R, F>(params: &RobotParams, x0: [f64; 2], max_steps: usize, stop_at_goal: bool, rng: &mut R, mut control: F) -> RobotRun
where
    R: Rng + ?Sized,
    F: FnMut(usize, [f64; 2], &mut R) -> [f64; 2],
{
    let mut run = RobotRun { states: vec![x0], actions: Vec::new(), reached: None, collisions: 0 };
    if at_goal(params, x0) {
        run.reached = Some(0);
        if stop_at_goal {
            return run;
        }
    }
    let mut x = x0;
    for k in 1..=max_steps {
        let u = params.clamp_action(control(k, x, rng));
        x = robot_step(params, x, u, rng);
        run.actions.push(u);
        run.states.push(x);
        run.collisions += in_obstacle(params, x) as usize;
        if run.reached.is_none() && at_goal(params, x) {
            run.reached = Some(k);
            if stop_at_goal {
                break;
            }
        }
    }
    run
}

/// Controller drawing from a stationary tabular policy at the cell of the
/// current position and applying the action-cell center.
pub fn tabular_controller<'a, R: Rng + ?Sized>(policy: &'a PolicyKernel) -> impl FnMut(usize, [f64; 2], &mut R) -> [f64; 2] + 'a {
    move |_, x, rng| {
        let cell = policy.states().index_of(&x);
        let a = policy.sample(1, cell, rng);
        let c = policy.actions().center(a);
        [c[0], c[1]]
    }
}

/// Controller sampling `π*_1(.|x)` of a closed-form solution at every
/// step, i.e. a receding horizon of the model's length.
pub fn gaussian_controller<'a, R: Rng + ?Sized>(state: &'a LqgRecursionState) -> Result<impl FnMut(usize, [f64; 2], &mut R) -> [f64; 2] + 'a> {
    let step = state.step(1);
    if step.gain.nrows() != 2 {
        return Err(Error::Structure("robot controller needs a two-input model".into()));
    }
    let chol = cholesky_lower(&step.sigma_star)?;
    Ok(move |_, x: [f64; 2], rng: &mut R| {
        let (mean, _) = state.policy(1, &DVector::from_row_slice(&x));
        let u = sample_gaussian(&mean, &chol, rng);
        [u[0], u[1]]
    })
}
