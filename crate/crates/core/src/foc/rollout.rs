use rand::Rng;

use crate::error::{Error, Result};
use crate::estimation::Dataset;
use crate::kernel::{PolicyKernel, TransitionKernel};

/// Cell-index trajectory: `states[0..=N]`, `actions[0..N]` (action `k` is
/// `actions[k-1]`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trajectory {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
}

impl Trajectory {
    /// Converts cells to their centers.
    pub fn to_dataset(&self, kernel: &TransitionKernel) -> Dataset {
        let states = self.states.iter().map(|&x| kernel.states().center(x)).collect();
        let actions = self.actions.iter().map(|&u| kernel.actions().center(u)).collect();
        Dataset::new(states, actions).expect("grid centers form a valid dataset")
    }
}

/// Samples `u_k ~ π_k(.|x_{k-1})` then `x_k ~ p_k(.|x_{k-1}, u_k)` for
/// `k = 1..=steps`.
pub fn rollout<R: Rng + ?Sized>(kernel: &TransitionKernel, policy: &PolicyKernel, x0: usize, rng: &mut R, steps: usize) -> Result<Trajectory> {
    if !policy.compatible_with(kernel) {
        return Err(Error::Structure("policy and kernel use different grids".into()));
    }
    if !(policy.covers(steps) && kernel.covers(steps)) {
        return Err(Error::Structure(format!("policy or kernel does not cover {steps} steps")));
    }
    if x0 >= kernel.n_states() {
        return Err(Error::Structure(format!("initial cell {x0} outside the grid")));
    }
    let mut states = Vec::with_capacity(steps + 1);
    let mut actions = Vec::with_capacity(steps);
    states.push(x0);
    let mut x = x0;
    for k in 1..=steps {
        let u = policy.sample(k, x, rng);
        x = kernel.row(k, x, u).sample(rng);
        actions.push(u);
        states.push(x);
    }
    Ok(Trajectory { states, actions })
}
