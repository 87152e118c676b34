//! Log-domain helpers.

/// Exponents below this underflow to zero in `f64`; we treat them as exact zeros.
pub const EXP_FLOOR: f64 = -745.0;

#[inline]
pub fn exp_floor(x: f64) -> f64 {
    if x < EXP_FLOOR {
        0.0
    } else {
        x.exp()
    }
}

/// `ln sum_i exp(x_i)` with max-shift. Returns `-inf` when every entry is
/// `-inf` (or the slice is empty).
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let s: f64 = xs.iter().map(|&x| exp_floor(x - max)).sum();
    max + s.ln()
}

/// Turns log-weights into probabilities in place and returns the log
/// normalizer. Returns `None` (leaving the slice untouched) when no entry is
/// finite.
pub fn softmax_in_place(xs: &mut [f64]) -> Option<f64> {
    let lse = log_sum_exp(xs);
    if !lse.is_finite() {
        return None;
    }
    for x in xs.iter_mut() {
        *x = exp_floor(*x - lse);
    }
    Some(lse)
}
