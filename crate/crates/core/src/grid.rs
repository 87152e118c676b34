//! Regular rectangular grids over bounded boxes.
//!
//! Cells are numbered row-major: the first axis varies slowest.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lower: f64,
    pub upper: f64,
    pub bins: usize,
}

impl Axis {
    pub fn new(lower: f64, upper: f64, bins: usize) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite()) || lower >= upper {
            return Err(Error::Invalid(format!("axis bounds must satisfy lower < upper, got [{lower}, {upper}]")));
        }
        if bins == 0 {
            return Err(Error::Invalid("axis needs at least one bin".into()));
        }
        Ok(Axis { lower, upper, bins })
    }

    pub fn width(&self) -> f64 {
        (self.upper - self.lower) / self.bins as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        self.lower + (i as f64 + 0.5) * self.width()
    }

    /// Bin containing `x`; values outside the range land in the boundary bins.
    pub fn bin(&self, x: f64) -> usize {
        let t = ((x - self.lower) / self.width()).floor();
        if t.is_nan() || t < 0.0 {
            0
        } else {
            (t as usize).min(self.bins - 1)
        }
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.bins).map(|i| self.center(i)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpace {
    axes: Vec<Axis>,
}

impl GridSpace {
    pub fn new(axes: Vec<Axis>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::Invalid("grid needs at least one axis".into()));
        }
        for a in &axes {
            Axis::new(a.lower, a.upper, a.bins)?;
        }
        let cells = axes.iter().try_fold(1usize, |acc, a| acc.checked_mul(a.bins)).filter(|&n| n <= u32::MAX as usize);
        if cells.is_none() {
            return Err(Error::Invalid("grid has too many cells".into()));
        }
        Ok(GridSpace { axes })
    }

    /// One-dimensional grid.
    pub fn line(lower: f64, upper: f64, bins: usize) -> Result<Self> {
        Self::new(vec![Axis::new(lower, upper, bins)?])
    }

    /// Grid whose cells are labelled `0..n`, centers at the integers.
    pub fn indexed(n: usize) -> Result<Self> {
        Self::line(-0.5, n as f64 - 0.5, n)
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn dims(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.bins).product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn flat(&self, multi: &[usize]) -> usize {
        debug_assert_eq!(multi.len(), self.dims());
        multi.iter().zip(&self.axes).fold(0, |acc, (&i, a)| acc * a.bins + i)
    }

    pub fn multi(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.dims()];
        for (slot, a) in out.iter_mut().zip(&self.axes).rev() {
            *slot = index % a.bins;
            index /= a.bins;
        }
        out
    }

    pub fn center_into(&self, mut index: usize, out: &mut [f64]) {
        for (slot, a) in out.iter_mut().zip(&self.axes).rev() {
            *slot = a.center(index % a.bins);
            index /= a.bins;
        }
    }

    pub fn center(&self, index: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dims()];
        self.center_into(index, &mut out);
        out
    }

    /// Cell containing `x`, clamping each coordinate to the boundary bins.
    pub fn index_of(&self, x: &[f64]) -> usize {
        debug_assert_eq!(x.len(), self.dims());
        x.iter().zip(&self.axes).fold(0, |acc, (&v, a)| acc * a.bins + a.bin(v))
    }

    pub fn centers(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.center(i)).collect()
    }

    /// Product grid `self × other`; cells of `self` vary slowest.
    pub fn product(&self, other: &GridSpace) -> GridSpace {
        let mut axes = self.axes.clone();
        axes.extend_from_slice(&other.axes);
        GridSpace { axes }
    }
}
