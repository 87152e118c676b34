//! Tabular probability distributions, KL divergence and sampling.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpace;

/// Tolerance on `|sum - 1|` for every stored distribution.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// A real number or `+inf`, kept as a tag so infinities never leak into
/// arithmetic silently.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum ExtendedReal {
    Finite(f64),
    Infinite,
}

impl ExtendedReal {
    pub fn is_finite(self) -> bool {
        matches!(self, ExtendedReal::Finite(_))
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            ExtendedReal::Finite(v) => Some(v),
            ExtendedReal::Infinite => None,
        }
    }

    /// `exp(-self)`, which is exactly zero for the infinite tag.
    pub fn exp_neg(self) -> f64 {
        match self {
            ExtendedReal::Finite(v) => crate::numeric::exp_floor(-v),
            ExtendedReal::Infinite => 0.0,
        }
    }

    /// `-self` as an ordinary float, `-inf` for the infinite tag. Only meant
    /// for log-domain weights.
    pub fn neg_log_weight(self) -> f64 {
        match self {
            ExtendedReal::Finite(v) => -v,
            ExtendedReal::Infinite => f64::NEG_INFINITY,
        }
    }

    pub fn scale(self, a: f64) -> Self {
        match self {
            ExtendedReal::Finite(v) => ExtendedReal::Finite(a * v),
            inf => inf,
        }
    }
}

impl std::ops::Add for ExtendedReal {
    type Output = ExtendedReal;
    fn add(self, rhs: Self) -> Self {
        match (self, rhs) {
            (ExtendedReal::Finite(a), ExtendedReal::Finite(b)) => ExtendedReal::Finite(a + b),
            _ => ExtendedReal::Infinite,
        }
    }
}

impl std::ops::Add<f64> for ExtendedReal {
    type Output = ExtendedReal;
    fn add(self, rhs: f64) -> Self {
        match self {
            ExtendedReal::Finite(a) => ExtendedReal::Finite(a + rhs),
            inf => inf,
        }
    }
}

impl std::fmt::Display for ExtendedReal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ExtendedReal::Finite(v) => write!(f, "{v}"),
            ExtendedReal::Infinite => write!(f, "inf"),
        }
    }
}

/// Checks that `mass` is a probability vector.
pub fn validate_mass(mass: &[f64]) -> Result<()> {
    let mut sum = 0.0;
    for (i, &m) in mass.iter().enumerate() {
        if !(m >= 0.0 && m.is_finite()) {
            return Err(Error::Invalid(format!("mass at cell {i} is {m}")));
        }
        sum += m;
    }
    if (sum - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::Invalid(format!("masses sum to {sum}, not 1")));
    }
    Ok(())
}

/// `KL(p || q)` of two probability vectors on the same support.
pub fn kl_slices(p: &[f64], q: &[f64]) -> ExtendedReal {
    debug_assert_eq!(p.len(), q.len());
    let mut acc = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            if qi <= 0.0 {
                return ExtendedReal::Infinite;
            }
            acc += pi * (pi / qi).ln();
        }
    }
    ExtendedReal::Finite(acc.max(0.0))
}

/// Draws an index with probability proportional to `weights` (which need
/// not sum to one, but must have positive total).
pub fn sample_weights<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last_positive = i;
            if target < acc {
                return i;
            }
        }
    }
    last_positive
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteDistribution {
    grid: Arc<GridSpace>,
    mass: Vec<f64>,
}

impl DiscreteDistribution {
    pub fn new(grid: Arc<GridSpace>, mass: Vec<f64>) -> Result<Self> {
        if mass.len() != grid.len() {
            return Err(Error::Structure(format!("distribution has {} masses for a grid of {} cells", mass.len(), grid.len())));
        }
        validate_mass(&mass)?;
        Ok(DiscreteDistribution { grid, mass })
    }

    /// Normalizes nonnegative `weights` explicitly.
    pub fn from_weights(grid: Arc<GridSpace>, mut weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Invalid("weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::Invalid("weights have zero total".into()));
        }
        weights.iter_mut().for_each(|w| *w /= total);
        Self::new(grid, weights)
    }

    pub fn delta(grid: Arc<GridSpace>, cell: usize) -> Result<Self> {
        let mut mass = vec![0.0; grid.len()];
        *mass.get_mut(cell).ok_or_else(|| Error::Structure(format!("cell {cell} outside grid")))? = 1.0;
        Ok(DiscreteDistribution { grid, mass })
    }

    pub fn uniform(grid: Arc<GridSpace>) -> Self {
        let n = grid.len();
        DiscreteDistribution { mass: vec![1.0 / n as f64; n], grid }
    }

    pub fn grid(&self) -> &Arc<GridSpace> {
        &self.grid
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn into_mass(self) -> Vec<f64> {
        self.mass
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_weights(&self.mass, rng)
    }

    fn check_same_grid(&self, other: &DiscreteDistribution) -> Result<()> {
        if Arc::ptr_eq(&self.grid, &other.grid) || self.grid == other.grid {
            Ok(())
        } else {
            Err(Error::Structure("distributions live on different grids".into()))
        }
    }
}

pub fn kl_divergence(p: &DiscreteDistribution, q: &DiscreteDistribution) -> Result<ExtendedReal> {
    p.check_same_grid(q)?;
    Ok(kl_slices(&p.mass, &q.mass))
}

/// `sum_x f(x) p(x)` over the support of `p`.
pub fn expectation(p: &DiscreteDistribution, f: impl Fn(usize) -> f64) -> f64 {
    p.mass.iter().enumerate().filter(|(_, &m)| m > 0.0).map(|(i, &m)| m * f(i)).sum()
}

/// KL between joints over `(v, z)` computed through the chain rule: the
/// marginal divergence on `v` plus the expected conditional divergence on
/// `z`. The first `v_axes` axes of the shared grid make up `v`.
pub fn chained_joint_kl(p: &DiscreteDistribution, q: &DiscreteDistribution, v_axes: usize) -> Result<ExtendedReal> {
    p.check_same_grid(q)?;
    let axes = p.grid.axes();
    if v_axes == 0 || v_axes >= axes.len() {
        return Err(Error::Structure(format!("cannot split a {}-axis grid after {v_axes} axes", axes.len())));
    }
    let nz: usize = axes[v_axes..].iter().map(|a| a.bins).product();
    let nv = p.mass.len() / nz;
    let marginal = |m: &[f64]| -> Vec<f64> { m.chunks(nz).map(|c| c.iter().sum()).collect() };
    let pv = marginal(&p.mass);
    let qv = marginal(&q.mass);
    let mut total = kl_slices(&pv, &qv);
    let mut pc = vec![0.0; nz];
    let mut qc = vec![0.0; nz];
    for v in 0..nv {
        if pv[v] <= 0.0 {
            continue;
        }
        let prow = &p.mass[v * nz..(v + 1) * nz];
        let qrow = &q.mass[v * nz..(v + 1) * nz];
        for z in 0..nz {
            pc[z] = prow[z] / pv[v];
            qc[z] = if qv[v] > 0.0 { qrow[z] / qv[v] } else { 0.0 };
        }
        total = total + kl_slices(&pc, &qc).scale(pv[v]);
    }
    Ok(total)
}
