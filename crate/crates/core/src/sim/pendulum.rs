//! Stochastic pendulum with the upright position at `θ = 0`.
//!
//! `θ' = θ + ω dt + W_θ`, `ω' = ω + (g/l sin θ + u/(m l²)) dt + W_ω`, with the
//! angle wrapped to `[-π, π)`.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{filter_angle_wrap, histogram_estimate, Database, Dataset, HistogramOptions};
use crate::grid::{Axis, GridSpace};
use crate::ioc::{Feature, NamedFeature, Observation};
use crate::kernel::{CostTable, PolicyKernel, TransitionKernel};
use crate::par::Execution;
use crate::sim::episode_rng;

/// How the two noise parameters are read.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseScale {
    #[default]
    Variance,
    StdDev,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PendulumParams {
    pub mass: f64,
    pub length: f64,
    pub gravity: f64,
    pub dt: f64,
    /// Noise parameters for `θ` and `ω`.
    pub noise: [f64; 2],
    pub noise_scale: NoiseScale,
    pub torque_bound: f64,
    pub omega_bound: f64,
    pub theta_bins: usize,
    pub omega_bins: usize,
    pub action_bins: usize,
}

impl Default for PendulumParams {
    fn default() -> Self {
        PendulumParams::target()
    }
}

impl PendulumParams {
    /// The pendulum to be controlled: 1 kg, 0.6 m.
    pub fn target() -> Self {
        PendulumParams {
            mass: 1.0,
            length: 0.6,
            gravity: 9.81,
            dt: 0.1,
            noise: [0.05, 0.1],
            noise_scale: NoiseScale::Variance,
            torque_bound: 2.5,
            omega_bound: 5.0,
            theta_bins: 25,
            omega_bins: 25,
            action_bins: 11,
        }
    }

    /// The lighter pendulum the reference model is built from: 0.5 kg, 0.5 m.
    pub fn reference() -> Self {
        PendulumParams { mass: 0.5, length: 0.5, ..PendulumParams::target() }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.mass, self.length, self.dt, self.gravity, self.torque_bound, self.omega_bound];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Invalid("pendulum mass, length, gravity, dt and bounds must be positive".into()));
        }
        if self.noise.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Invalid("pendulum noise parameters must be >= 0".into()));
        }
        if self.theta_bins == 0 || self.omega_bins == 0 || self.action_bins == 0 {
            return Err(Error::Invalid("pendulum grids need at least one bin per axis".into()));
        }
        Ok(())
    }

    fn noise_std(&self) -> [f64; 2] {
        match self.noise_scale {
            NoiseScale::Variance => [self.noise[0].sqrt(), self.noise[1].sqrt()],
            NoiseScale::StdDev => self.noise,
        }
    }

    pub fn state_grid(&self) -> Result<Arc<GridSpace>> {
        Ok(Arc::new(GridSpace::new(vec![Axis::new(-PI, PI, self.theta_bins)?, Axis::new(-self.omega_bound, self.omega_bound, self.omega_bins)?])?))
    }

    pub fn action_grid(&self) -> Result<Arc<GridSpace>> {
        Ok(Arc::new(GridSpace::line(-self.torque_bound, self.torque_bound, self.action_bins)?))
    }

    /// `0.5 m l² ω² + m g l cos θ`; the upright rest state has the most energy.
    pub fn energy(&self, theta: f64, omega: f64) -> f64 {
        let (m, l) = (self.mass, self.length);
        0.5 * m * l * l * omega * omega + m * self.gravity * l * theta.cos()
    }
}

/// Maps an angle to `[-π, π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let t = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if t >= PI {
        -PI
    } else {
        t
    }
}

/// One step of the dynamics. The torque is clamped to the bound.
pub fn pendulum_step<R: Rng + ?Sized>(params: &PendulumParams, state: [f64; 2], u: f64, rng: &mut R) -> [f64; 2] {
    let [theta, omega] = state;
    let u = u.clamp(-params.torque_bound, params.torque_bound);
    let (m, l, dt) = (params.mass, params.length, params.dt);
    let [s_theta, s_omega] = params.noise_std();
    let w_theta = if s_theta > 0.0 { Normal::new(0.0, s_theta).unwrap().sample(rng) } else { 0.0 };
    let w_omega = if s_omega > 0.0 { Normal::new(0.0, s_omega).unwrap().sample(rng) } else { 0.0 };
    let theta_next = theta + omega * dt + w_theta;
    let omega_next = omega + (params.gravity / l * theta.sin() + u / (m * l * l)) * dt + w_omega;
    [wrap_angle(theta_next), omega_next]
}

/// `(θ - θ_d)² + 0.01 (ω - ω_d)²` with the upright target.
pub fn pendulum_cost(state: &[f64]) -> f64 {
    state[0] * state[0] + 0.01 * state[1] * state[1]
}

pub fn pendulum_cost_table(states: Arc<GridSpace>) -> Result<CostTable> {
    CostTable::from_fn(states, pendulum_cost)
}

/// Energy-shaping swing-up with a linear catch near the top.
///
/// Away from the top the torque pumps energy toward the upright level:
/// `u = clamp(k_e (E_top - E) s)` where `s` is the direction of motion
/// (`+1` at rest). Pumping stops once `|ω|` exceeds `coast_speed`: a full
/// swing needs more speed at the bottom than the velocity grid spans, and
/// edge cells would otherwise report a clamped, too-low energy. Within
/// `catch_angle` of upright, with the energy error below `catch_energy`, the
/// torque cancels gravity and adds PD feedback.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SwingUpController {
    pub energy_gain: f64,
    pub kp: f64,
    pub kd: f64,
    pub catch_angle: f64,
    pub catch_energy: f64,
    pub coast_speed: f64,
    /// Standard deviation of the Gaussian spread put around the feedback
    /// torque when building the policy kernel.
    pub spread: f64,
}

impl Default for SwingUpController {
    fn default() -> Self {
        SwingUpController { energy_gain: 10.0, kp: 40.0, kd: 10.0, catch_angle: 0.6, catch_energy: 1.5, coast_speed: 4.5, spread: 1.0 }
    }
}

impl SwingUpController {
    pub fn torque(&self, params: &PendulumParams, theta: f64, omega: f64) -> f64 {
        let (m, l, g) = (params.mass, params.length, params.gravity);
        let top = m * g * l;
        let error = top - params.energy(theta, omega);
        let u = if theta.abs() < self.catch_angle && error.abs() < self.catch_energy * top {
            -m * l * l * (g / l * theta.sin() + self.kp * theta + self.kd * omega)
        } else if omega.abs() > self.coast_speed {
            0.0
        } else {
            let direction = if omega >= 0.0 { 1.0 } else { -1.0 };
            self.energy_gain * error * direction
        };
        u.clamp(-params.torque_bound, params.torque_bound)
    }
}

/// Discretizes the swing-up feedback of `params` into a stationary policy:
/// each row is a Gaussian of width `spread` around the feedback torque,
/// evaluated at the action centers and normalized.
pub fn reference_pendulum_policy(params: &PendulumParams, controller: &SwingUpController) -> Result<PolicyKernel> {
    params.validate()?;
    if !(controller.spread > 0.0) {
        return Err(Error::Invalid("controller spread must be positive".into()));
    }
    let states = params.state_grid()?;
    let actions = params.action_grid()?;
    let centers = actions.axes()[0].centers();
    let mut table = Vec::with_capacity(states.len() * centers.len());
    let mut x = [0.0; 2];
    for cell in 0..states.len() {
        states.center_into(cell, &mut x);
        let u = controller.torque(params, x[0], x[1]);
        let logits: Vec<f64> = centers.iter().map(|c| -0.5 * ((c - u) / controller.spread).powi(2)).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = w.iter().sum();
        table.extend(w.iter().map(|v| v / total));
    }
    PolicyKernel::new(states, actions, vec![table])
}

/// Episodes driven by torques drawn uniformly from the bound, starting from
/// states uniform on the grid box. Episode `i` uses its own random stream.
pub fn pendulum_database(params: &PendulumParams, episodes: usize, steps: usize, seed: u64, exec: Execution) -> Result<Database> {
    params.validate()?;
    let b = params.torque_bound;
    let datasets = exec.try_map(episodes, |i| {
        let mut rng = episode_rng(seed, i as u64);
        let mut x = [rng.random_range(-PI..PI), rng.random_range(-params.omega_bound..params.omega_bound)];
        let mut states = vec![x.to_vec()];
        let mut actions = Vec::with_capacity(steps);
        for _ in 0..steps {
            let u = rng.random_range(-b..=b);
            x = pendulum_step(params, x, u, &mut rng);
            actions.push(vec![u]);
            states.push(x.to_vec());
        }
        Dataset::new(states, actions)
    })?;
    Ok(Database::new(datasets))
}

/// Closed loop under a stationary tabular policy: the action cell is drawn
/// from the row of the cell containing the current state and its center
/// torque is applied.
pub fn pendulum_closed_loop<R: Rng + ?Sized>(
    params: &PendulumParams,
    policy: &PolicyKernel,
    x0: [f64; 2],
    steps: usize,
    rng: &mut R,
) -> Result<Dataset> {
    let states = policy.states();
    let actions = policy.actions();
    let mut x = x0;
    let mut xs = vec![x.to_vec()];
    let mut us = Vec::with_capacity(steps);
    for _ in 0..steps {
        let cell = states.index_of(&x);
        let a = policy.sample(1, cell, rng);
        let u = actions.center(a)[0];
        x = pendulum_step(params, x, u, rng);
        us.push(vec![u]);
        xs.push(x.to_vec());
    }
    Dataset::new(xs, us)
}

/// First step at which `|θ| < tolerance`, if any.
pub fn first_upright(ds: &Dataset, tolerance: f64) -> Option<usize> {
    ds.states().iter().position(|x| x[0].abs() < tolerance)
}

/// Settings for building the tabular target and reference models from
/// simulated data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PendulumSetup {
    pub target: PendulumParams,
    pub reference: PendulumParams,
    pub controller: SwingUpController,
    pub episodes: usize,
    pub steps: usize,
    pub seed: u64,
    /// Additive count smoothing for the reference dynamics only. The target
    /// kernel stays a plain histogram.
    pub reference_smoothing: f64,
}

impl Default for PendulumSetup {
    fn default() -> Self {
        PendulumSetup {
            target: PendulumParams::target(),
            reference: PendulumParams::reference(),
            controller: SwingUpController::default(),
            episodes: 10_000,
            steps: 100,
            seed: 1,
            reference_smoothing: 0.01,
        }
    }
}

/// Estimated kernels, reference policy and true cost on shared grids.
#[derive(Clone, Debug)]
pub struct PendulumModels {
    pub states: Arc<GridSpace>,
    pub actions: Arc<GridSpace>,
    pub target: TransitionKernel,
    pub reference_dynamics: TransitionKernel,
    pub reference_policy: PolicyKernel,
    pub cost: CostTable,
}

/// Simulates both databases (target with `seed`, reference with `seed + 1`)
/// and estimates the kernels. The grids come from the target parameters.
pub fn pendulum_models(setup: &PendulumSetup, exec: Execution) -> Result<PendulumModels> {
    let (t, r) = (&setup.target, &setup.reference);
    t.validate()?;
    r.validate()?;
    if (t.theta_bins, t.omega_bins, t.action_bins, t.omega_bound, t.torque_bound)
        != (r.theta_bins, r.omega_bins, r.action_bins, r.omega_bound, r.torque_bound)
    {
        return Err(Error::Structure("target and reference pendulums must share their grids".into()));
    }
    let states = t.state_grid()?;
    let actions = t.action_grid()?;
    let db_t = pendulum_database(t, setup.episodes, setup.steps, setup.seed, exec)?;
    let db_r = pendulum_database(r, setup.episodes, setup.steps, setup.seed.wrapping_add(1), exec)?;
    let plain = HistogramOptions { execution: exec, ..HistogramOptions::default() };
    let target = histogram_estimate(&db_t, states.clone(), actions.clone(), &plain)?;
    let smoothed = HistogramOptions { smoothing: setup.reference_smoothing, ..plain };
    let reference_dynamics = histogram_estimate(&db_r, states.clone(), actions.clone(), &smoothed)?;
    let reference_policy = reference_pendulum_policy(r, &setup.controller)?;
    let cost = pendulum_cost_table(states.clone())?;
    Ok(PendulumModels { states, actions, target, reference_dynamics, reference_policy, cost })
}

/// The two-feature basis `[|θ|, |ω|]`.
pub fn pendulum_features() -> Vec<NamedFeature> {
    vec![
        NamedFeature { name: "abs_theta".into(), feature: Feature::AbsoluteDeviation { coord: 0, target: 0.0 } },
        NamedFeature { name: "abs_omega".into(), feature: Feature::AbsoluteDeviation { coord: 1, target: 0.0 } },
    ]
}

/// Grid-indexed observations from a closed-loop run, skipping pairs whose
/// angle jumps across the wrap seam. Every observation is tagged step 1.
pub fn pendulum_observations(ds: &Dataset, states: &GridSpace, actions: &GridSpace) -> Vec<Observation> {
    filter_angle_wrap(ds, 0)
        .into_iter()
        .map(|k| {
            let (x, u) = ds.pair(k);
            Observation { step: 1, state: states.index_of(x), action: actions.index_of(u) }
        })
        .collect()
}

/// The hanging rest state.
pub const HANGING: [f64; 2] = [-PI, 0.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilizationReport {
    pub runs: usize,
    /// Runs that reached `|θ| < tolerance` within the step budget.
    pub entered: usize,
    /// Share of states in the second half of the runs with `|θ| < 0.5`.
    pub hold_fraction: f64,
}

impl StabilizationReport {
    pub fn success_rate(&self) -> f64 {
        self.entered as f64 / self.runs as f64
    }
}

/// Runs `runs` closed loops from the hanging state, run `i` on stream `i`
/// of `seed`.
pub fn stabilization_trials(
    params: &PendulumParams,
    policy: &PolicyKernel,
    runs: usize,
    steps: usize,
    tolerance: f64,
    seed: u64,
) -> Result<StabilizationReport> {
    if runs == 0 || steps == 0 {
        return Err(Error::Invalid("stabilization trials need at least one run and one step".into()));
    }
    let mut entered = 0;
    let (mut held, mut late) = (0usize, 0usize);
    for i in 0..runs {
        let mut rng = episode_rng(seed, i as u64);
        let ds = pendulum_closed_loop(params, policy, HANGING, steps, &mut rng)?;
        if first_upright(&ds, tolerance).is_some() {
            entered += 1;
        }
        let tail = &ds.states()[steps / 2 + 1..];
        held += tail.iter().filter(|x| x[0].abs() < 0.5).count();
        late += tail.len();
    }
    Ok(StabilizationReport { runs, entered, hold_fraction: held as f64 / late as f64 })
}
