use crate::error::{Error, Result};
use crate::prob::{kl_slices, ExtendedReal};

fn shift_normalize(c: &[f64]) -> Option<Vec<f64>> {
    let min = c.iter().copied().fold(f64::INFINITY, f64::min);
    let shifted: Vec<f64> = c.iter().map(|v| v - min).collect();
    let total: f64 = shifted.iter().sum();
    (total > 0.0 && total.is_finite()).then(|| shifted.iter().map(|v| v / total).collect())
}

/// Shifts each cost surface to a minimum of zero, normalizes it to unit
/// sum and returns `KL(true || estimate)`. The metric is not scale
/// invariant.
pub fn cost_discrepancy(c_true: &[f64], c_est: &[f64]) -> Result<ExtendedReal> {
    if c_true.len() != c_est.len() || c_true.is_empty() {
        return Err(Error::Structure("cost tables differ in size".into()));
    }
    let p = shift_normalize(c_true).ok_or_else(|| Error::Invalid("true cost is constant and cannot be normalized".into()))?;
    let q = shift_normalize(c_est).ok_or_else(|| Error::Invalid("estimated cost is constant and cannot be normalized".into()))?;
    Ok(kl_slices(&p, &q))
}
