//! Conditional probability tables: transition kernels (sparse rows), policies
//! (dense rows) and stage-cost tables.
//!
//! Each table holds either one slice per time step or a single stationary
//! slice that is broadcast to every step. Steps are numbered from 1, matching
//! the `x_{k-1}, u_k -> x_k` convention.

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::GridSpace;
use crate::prob::{sample_weights, ExtendedReal, NORMALIZATION_TOL};

/// Borrowed view of one sparse probability row. Indices are strictly
/// increasing and every stored mass is positive.
#[derive(Clone, Copy, Debug)]
pub struct Row<'a> {
    pub index: &'a [u32],
    pub mass: &'a [f64],
}

impl<'a> Row<'a> {
    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + 'a {
        self.index.iter().map(|&i| i as usize).zip(self.mass.iter().copied())
    }

    /// `E[f]` under this row, where `f` is indexed by cell.
    pub fn expect(&self, f: &[f64]) -> f64 {
        self.iter().map(|(i, m)| m * f[i]).sum()
    }

    /// `sum p ln p`.
    pub fn neg_entropy(&self) -> f64 {
        self.mass.iter().map(|&m| m * m.ln()).sum()
    }

    /// Mass of cell `i`, zero when absent.
    pub fn get(&self, i: usize) -> f64 {
        match self.index.binary_search(&(i as u32)) {
            Ok(pos) => self.mass[pos],
            Err(_) => 0.0,
        }
    }

    /// `KL(self || other)` by merging the two sorted supports.
    pub fn kl(&self, other: &Row<'_>) -> ExtendedReal {
        let mut acc = 0.0;
        let mut j = 0;
        for (i, p) in self.iter() {
            while j < other.index.len() && (other.index[j] as usize) < i {
                j += 1;
            }
            if j == other.index.len() || other.index[j] as usize != i {
                return ExtendedReal::Infinite;
            }
            acc += p * (p / other.mass[j]).ln();
        }
        ExtendedReal::Finite(acc.max(0.0))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.index[sample_weights(self.mass, rng)] as usize
    }

    pub fn to_dense(&self, width: usize) -> Vec<f64> {
        let mut out = vec![0.0; width];
        for (i, m) in self.iter() {
            out[i] = m;
        }
        out
    }
}

/// Compressed sparse rows of probability vectors.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct SparseRows {
    offsets: Vec<usize>,
    index: Vec<u32>,
    mass: Vec<f64>,
}

impl SparseRows {
    pub fn new() -> Self {
        SparseRows { offsets: vec![0], index: Vec::new(), mass: Vec::new() }
    }

    /// Appends a row given as `(cell, mass)` pairs in increasing cell order;
    /// zero masses are skipped.
    pub fn push_row(&mut self, entries: impl IntoIterator<Item = (usize, f64)>) -> Result<()> {
        let start = self.index.len();
        for (i, m) in entries {
            if !(m >= 0.0 && m.is_finite()) {
                return Err(Error::Invalid(format!("row {} has mass {m}", self.rows())));
            }
            if m == 0.0 {
                continue;
            }
            if self.index.len() > start && *self.index.last().unwrap() as usize >= i {
                return Err(Error::Invalid(format!("row {} has unsorted or repeated cells", self.rows())));
            }
            self.index.push(i as u32);
            self.mass.push(m);
        }
        self.offsets.push(self.index.len());
        Ok(())
    }

    pub fn push_dense(&mut self, dense: &[f64]) -> Result<()> {
        self.push_row(dense.iter().copied().enumerate())
    }

    pub fn rows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.index.len()
    }

    pub fn row(&self, r: usize) -> Row<'_> {
        let (a, b) = (self.offsets[r], self.offsets[r + 1]);
        Row { index: &self.index[a..b], mass: &self.mass[a..b] }
    }

    fn validate(&self, width: usize) -> Result<()> {
        for r in 0..self.rows() {
            let row = self.row(r);
            if row.index.last().is_some_and(|&i| i as usize >= width) {
                return Err(Error::Structure(format!("row {r} references a cell outside the grid")));
            }
            let s: f64 = row.mass.iter().sum();
            if (s - 1.0).abs() > NORMALIZATION_TOL {
                return Err(Error::Invalid(format!("row {r} sums to {s}, not 1")));
            }
        }
        Ok(())
    }
}

fn same_grid(a: &Arc<GridSpace>, b: &Arc<GridSpace>) -> bool {
    Arc::ptr_eq(a, b) || a == b
}

fn step_slot(len: usize, k: usize) -> usize {
    assert!(k >= 1, "steps are numbered from 1");
    if len == 1 {
        0
    } else {
        k - 1
    }
}

/// `p(x_k | x_{k-1}, u_k)` with row index `x * |U| + u`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionKernel {
    states: Arc<GridSpace>,
    actions: Arc<GridSpace>,
    steps: Vec<SparseRows>,
}

impl TransitionKernel {
    pub fn new(states: Arc<GridSpace>, actions: Arc<GridSpace>, steps: Vec<SparseRows>) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::Structure("transition kernel needs at least one step".into()));
        }
        let rows = states.len() * actions.len();
        for (k, s) in steps.iter().enumerate() {
            if s.rows() != rows {
                return Err(Error::Structure(format!("step {} has {} rows, expected {rows}", k + 1, s.rows())));
            }
            s.validate(states.len()).map_err(|e| Error::Invalid(format!("transition step {}: {e}", k + 1)))?;
        }
        Ok(TransitionKernel { states, actions, steps })
    }

    pub fn stationary(states: Arc<GridSpace>, actions: Arc<GridSpace>, rows: SparseRows) -> Result<Self> {
        Self::new(states, actions, vec![rows])
    }

    /// Builds from dense per-step tables laid out `[x][u][x']`.
    pub fn from_dense(states: Arc<GridSpace>, actions: Arc<GridSpace>, steps: &[Vec<f64>]) -> Result<Self> {
        let n = states.len();
        let sparse = steps
            .iter()
            .map(|t| {
                if t.len() != n * actions.len() * n {
                    return Err(Error::Structure("dense transition table has the wrong size".into()));
                }
                let mut rows = SparseRows::new();
                for chunk in t.chunks(n) {
                    rows.push_dense(chunk)?;
                }
                Ok(rows)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(states, actions, sparse)
    }

    pub fn states(&self) -> &Arc<GridSpace> {
        &self.states
    }

    pub fn actions(&self) -> &Arc<GridSpace> {
        &self.actions
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn n_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn steps(&self) -> &[SparseRows] {
        &self.steps
    }

    pub fn is_stationary(&self) -> bool {
        self.steps.len() == 1
    }

    /// Whether the kernel defines step `k` (stationary kernels define all).
    pub fn covers(&self, k: usize) -> bool {
        self.is_stationary() || k <= self.steps.len()
    }

    pub fn at(&self, k: usize) -> &SparseRows {
        &self.steps[step_slot(self.steps.len(), k)]
    }

    pub fn row(&self, k: usize, x: usize, u: usize) -> Row<'_> {
        self.at(k).row(x * self.actions.len() + u)
    }

    pub fn same_grids(&self, other: &TransitionKernel) -> bool {
        same_grid(&self.states, &other.states) && same_grid(&self.actions, &other.actions)
    }
}

/// `pi(u_k | x_{k-1})`, dense rows laid out `[x][u]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyKernel {
    states: Arc<GridSpace>,
    actions: Arc<GridSpace>,
    steps: Vec<Vec<f64>>,
}

impl PolicyKernel {
    pub fn new(states: Arc<GridSpace>, actions: Arc<GridSpace>, steps: Vec<Vec<f64>>) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::Structure("policy needs at least one step".into()));
        }
        let (ns, na) = (states.len(), actions.len());
        for (k, t) in steps.iter().enumerate() {
            if t.len() != ns * na {
                return Err(Error::Structure(format!("policy step {} has {} entries, expected {}", k + 1, t.len(), ns * na)));
            }
            for (x, row) in t.chunks(na).enumerate() {
                crate::prob::validate_mass(row).map_err(|e| Error::Invalid(format!("policy step {}, state {x}: {e}", k + 1)))?;
            }
        }
        Ok(PolicyKernel { states, actions, steps })
    }

    pub fn uniform(states: Arc<GridSpace>, actions: Arc<GridSpace>) -> Self {
        let na = actions.len();
        let table = vec![1.0 / na as f64; states.len() * na];
        PolicyKernel { states, actions, steps: vec![table] }
    }

    pub fn states(&self) -> &Arc<GridSpace> {
        &self.states
    }

    pub fn actions(&self) -> &Arc<GridSpace> {
        &self.actions
    }

    pub fn steps(&self) -> &[Vec<f64>] {
        &self.steps
    }

    pub fn is_stationary(&self) -> bool {
        self.steps.len() == 1
    }

    pub fn covers(&self, k: usize) -> bool {
        self.is_stationary() || k <= self.steps.len()
    }

    pub fn at(&self, k: usize) -> &[f64] {
        &self.steps[step_slot(self.steps.len(), k)]
    }

    pub fn row(&self, k: usize, x: usize) -> &[f64] {
        let na = self.actions.len();
        &self.at(k)[x * na..(x + 1) * na]
    }

    pub fn sample<R: Rng + ?Sized>(&self, k: usize, x: usize, rng: &mut R) -> usize {
        sample_weights(self.row(k, x), rng)
    }

    pub fn compatible_with(&self, kernel: &TransitionKernel) -> bool {
        same_grid(&self.states, &kernel.states) && same_grid(&self.actions, &kernel.actions)
    }
}

/// Stage costs `c_k(x_k)` per cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CostTable {
    states: Arc<GridSpace>,
    steps: Vec<Vec<f64>>,
}

impl CostTable {
    pub fn new(states: Arc<GridSpace>, steps: Vec<Vec<f64>>) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::Structure("cost table needs at least one step".into()));
        }
        for (k, t) in steps.iter().enumerate() {
            if t.len() != states.len() {
                return Err(Error::Structure(format!("cost step {} has {} cells, expected {}", k + 1, t.len(), states.len())));
            }
            if let Some(x) = t.iter().position(|c| !c.is_finite()) {
                return Err(Error::Invalid(format!("cost step {}, cell {x} is not finite", k + 1)));
            }
        }
        Ok(CostTable { states, steps })
    }

    pub fn stationary(states: Arc<GridSpace>, table: Vec<f64>) -> Result<Self> {
        Self::new(states, vec![table])
    }

    /// Evaluates `f` at every cell center.
    pub fn from_fn(states: Arc<GridSpace>, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let table = (0..states.len()).map(|i| f(&states.center(i))).collect();
        Self::stationary(states, table)
    }

    pub fn zeros(states: Arc<GridSpace>) -> Self {
        let n = states.len();
        CostTable { states, steps: vec![vec![0.0; n]] }
    }

    pub fn states(&self) -> &Arc<GridSpace> {
        &self.states
    }

    pub fn steps(&self) -> &[Vec<f64>] {
        &self.steps
    }

    pub fn is_stationary(&self) -> bool {
        self.steps.len() == 1
    }

    pub fn covers(&self, k: usize) -> bool {
        self.is_stationary() || k <= self.steps.len()
    }

    pub fn at(&self, k: usize) -> &[f64] {
        &self.steps[step_slot(self.steps.len(), k)]
    }
}
