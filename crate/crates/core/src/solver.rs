//! Limited-memory BFGS for smooth convex objectives, with an optional
//! projection onto the nonpositive orthant.
//!
//! Unconstrained iterations use a strong-Wolfe line search whose accepted
//! step is refined by one secant step on the directional derivative; on a
//! quadratic that refinement is the exact minimizer, so the method reduces
//! to conjugate gradients there. The projected variant fixes variables that
//! sit on the bound with an outward-pointing gradient and backtracks along
//! the projection arc.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Stop once the (projected) gradient norm is below
    /// `grad_tol * max(1, |f|)`.
    pub grad_tol: f64,
    pub max_iter: usize,
    pub sufficient_decrease: f64,
    pub backtrack: f64,
    pub curvature: f64,
    pub memory: usize,
    /// Constrain every coordinate to be `<= 0`.
    pub nonpositive: bool,
    /// Steps longer than this are reported as an unbounded direction.
    pub max_step_norm: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            grad_tol: 1e-8,
            max_iter: 500,
            sufficient_decrease: 1e-4,
            backtrack: 0.5,
            curvature: 0.9,
            memory: 10,
            nonpositive: false,
            max_step_norm: 1e6,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if !(self.grad_tol > 0.0) || self.max_iter == 0 || self.memory == 0 || !(self.max_step_norm > 0.0) {
            return Err(Error::Invalid("solver tolerances, iteration and memory limits must be positive".into()));
        }
        if !unit(self.sufficient_decrease) || !unit(self.backtrack) || !unit(self.curvature) || self.curvature <= self.sufficient_decrease {
            return Err(Error::Invalid("line-search factors must lie in (0, 1) with curvature > sufficient decrease".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Converged,
    MaxIterations,
    /// The objective keeps decreasing along a ray; no minimizer was found.
    Unbounded,
    /// No acceptable step could be found (usually precision exhaustion).
    LineSearchFailed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub status: Status,
    pub trace: Vec<f64>,
}

impl Solution {
    pub fn converged(&self) -> bool {
        self.status == Status::Converged
    }
}

/// Clamps every coordinate to `<= 0`.
pub fn project_nonpositive(x: &mut [f64]) {
    x.iter_mut().for_each(|v| *v = v.min(0.0));
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

struct Counted<F> {
    f: F,
    evals: usize,
}

impl<F: FnMut(&[f64], &mut [f64]) -> f64> Counted<F> {
    fn eval(&mut self, x: &[f64], g: &mut [f64]) -> Result<f64> {
        self.evals += 1;
        let v = (self.f)(x, g);
        if !v.is_finite() || g.iter().any(|c| !c.is_finite()) {
            return Err(Error::Numerical(format!("objective returned {v} (or a non-finite gradient) at evaluation {}", self.evals)));
        }
        Ok(v)
    }
}

/// Curvature pairs and the two-loop recursion.
struct Memory {
    pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)>,
    cap: usize,
}

impl Memory {
    fn push(&mut self, s: Vec<f64>, y: Vec<f64>) {
        let sy = dot(&s, &y);
        if sy <= 1e-12 * norm(&s) * norm(&y) {
            return;
        }
        if self.pairs.len() == self.cap {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y, 1.0 / sy));
    }

    /// `-H g`, with coordinates where `mask` is false held at zero.
    fn direction(&self, g: &[f64], mask: Option<&[bool]>) -> Vec<f64> {
        let keep = |v: &mut Vec<f64>| {
            if let Some(m) = mask {
                v.iter_mut().zip(m).filter(|(_, &free)| !free).for_each(|(c, _)| *c = 0.0);
            }
        };
        let mut q = g.to_vec();
        keep(&mut q);
        let mut alpha = Vec::with_capacity(self.pairs.len());
        for (s, y, rho) in self.pairs.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            keep(&mut q);
            alpha.push(a);
        }
        if let Some((s, y, _)) = self.pairs.back() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y, rho), a) in self.pairs.iter().zip(alpha.into_iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
            keep(&mut q);
        }
        q.iter_mut().for_each(|v| *v = -*v);
        q
    }
}

/// Minimizes `f`, which writes the gradient into its second argument and
/// returns the objective value.
pub fn minimize<F>(f: F, x0: &[f64], cfg: &SolverConfig) -> Result<Solution>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    cfg.validate()?;
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("starting point must be finite".into()));
    }
    let mut obj = Counted { f, evals: 0 };
    let mut x = x0.to_vec();
    if cfg.nonpositive {
        project_nonpositive(&mut x);
    }
    let n = x.len();
    let mut g = vec![0.0; n];
    let mut fx = obj.eval(&x, &mut g)?;
    let mut trace = vec![fx];
    let mut memory = Memory { pairs: VecDeque::new(), cap: cfg.memory };
    let mut last_step: Option<Vec<f64>> = None;
    let mut status = Status::MaxIterations;
    let mut iterations = 0;

    let free_mask =
        |x: &[f64], g: &[f64]| -> Option<Vec<bool>> { cfg.nonpositive.then(|| x.iter().zip(g).map(|(&xi, &gi)| xi < 0.0 || gi >= 0.0).collect()) };
    let projected_norm = |x: &[f64], g: &[f64]| -> f64 {
        match free_mask(x, g) {
            Some(m) => g.iter().zip(&m).filter(|(_, &f)| f).map(|(v, _)| v * v).sum::<f64>().sqrt(),
            None => norm(g),
        }
    };

    while iterations < cfg.max_iter {
        if projected_norm(&x, &g) <= cfg.grad_tol * fx.abs().max(1.0) {
            status = Status::Converged;
            break;
        }
        iterations += 1;
        let mask = free_mask(&x, &g);
        let mut d = memory.direction(&g, mask.as_deref());
        if dot(&d, &g) >= 0.0 {
            memory.pairs.clear();
            d = g.iter().map(|v| -v).collect();
            if let Some(m) = &mask {
                d.iter_mut().zip(m).filter(|(_, &f)| !f).for_each(|(c, _)| *c = 0.0);
            }
        }
        let first_scale = if memory.pairs.is_empty() { (1.0 / norm(&d)).min(1.0) } else { 1.0 };
        let step = if cfg.nonpositive {
            projected_search(&mut obj, &x, fx, &g, &d, first_scale, cfg)?
        } else {
            wolfe_search(&mut obj, &x, fx, &g, &d, first_scale, cfg)?
        };
        match step {
            Search::Accepted { x: xn, f: fnew, g: gn } => {
                let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
                if norm(&s) > cfg.max_step_norm {
                    x = xn;
                    fx = fnew;
                    g = gn;
                    trace.push(fx);
                    status = Status::Unbounded;
                    break;
                }
                let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
                memory.push(s.clone(), y);
                last_step = Some(s);
                x = xn;
                fx = fnew;
                g = gn;
                trace.push(fx);
            }
            Search::Unbounded { x: xn, f: fnew, g: gn } => {
                x = xn;
                fx = fnew;
                g = gn;
                trace.push(fx);
                status = Status::Unbounded;
                break;
            }
            Search::Failed => {
                status = Status::LineSearchFailed;
                break;
            }
        }
    }
    if status == Status::Converged {
        if let Some(s) = &last_step {
            if ray_decreases(&mut obj, &x, fx, s, cfg)? {
                status = Status::Unbounded;
            }
        }
    }
    let grad_norm = projected_norm(&x, &g);
    Ok(Solution { x, value: fx, grad_norm, iterations, evaluations: obj.evals, status, trace })
}

/// After a gradient-based stop, checks whether the objective still falls
/// far along the last search direction. Log-sum-exp objectives approach
/// their infimum exponentially, so a tiny gradient alone does not certify a
/// minimizer.
fn ray_decreases<F: FnMut(&[f64], &mut [f64]) -> f64>(obj: &mut Counted<F>, x: &[f64], fx: f64, s: &[f64], cfg: &SolverConfig) -> Result<bool> {
    let len = norm(s);
    if len == 0.0 {
        return Ok(false);
    }
    let mut g = vec![0.0; x.len()];
    let slack = 1e-12 * (1.0 + fx.abs());
    for t in [10.0, 1e3, 1e6] {
        let mut y: Vec<f64> = x.iter().zip(s).map(|(a, b)| a + t * b / len).collect();
        if cfg.nonpositive {
            project_nonpositive(&mut y);
        }
        let fy = (obj.f)(&y, &mut g);
        obj.evals += 1;
        if fy.is_finite() && fy < fx - slack {
            return Ok(true);
        }
    }
    Ok(false)
}

enum Search {
    Accepted { x: Vec<f64>, f: f64, g: Vec<f64> },
    Unbounded { x: Vec<f64>, f: f64, g: Vec<f64> },
    Failed,
}

struct Probe {
    alpha: f64,
    f: f64,
    d: f64,
    x: Vec<f64>,
    g: Vec<f64>,
}

fn probe<F: FnMut(&[f64], &mut [f64]) -> f64>(obj: &mut Counted<F>, x: &[f64], dir: &[f64], alpha: f64) -> Result<Probe> {
    let xn: Vec<f64> = x.iter().zip(dir).map(|(a, b)| a + alpha * b).collect();
    let mut g = vec![0.0; x.len()];
    let f = obj.eval(&xn, &mut g)?;
    Ok(Probe { alpha, f, d: dot(&g, dir), x: xn, g })
}

/// Minimizer of the cubic through two points with values and slopes,
/// safeguarded into `[lo + 0.1 w, hi - 0.1 w]` of the bracket.
fn cubic_min(a: &Probe, b: &Probe) -> f64 {
    let (lo, hi) = if a.alpha < b.alpha { (a.alpha, b.alpha) } else { (b.alpha, a.alpha) };
    let d1 = a.d + b.d - 3.0 * (a.f - b.f) / (a.alpha - b.alpha);
    let disc = d1 * d1 - a.d * b.d;
    let mid = 0.5 * (lo + hi);
    if !(disc >= 0.0) {
        return mid;
    }
    let d2 = (b.alpha - a.alpha).signum() * disc.sqrt();
    let t = b.alpha - (b.alpha - a.alpha) * (b.d + d2 - d1) / (b.d - a.d + 2.0 * d2);
    let w = hi - lo;
    if t.is_finite() {
        t.clamp(lo + 0.1 * w, hi - 0.1 * w)
    } else {
        mid
    }
}

fn wolfe_search<F: FnMut(&[f64], &mut [f64]) -> f64>(
    obj: &mut Counted<F>,
    x: &[f64],
    fx: f64,
    g: &[f64],
    dir: &[f64],
    first: f64,
    cfg: &SolverConfig,
) -> Result<Search> {
    let d0 = dot(g, dir);
    let (c1, c2) = (cfg.sufficient_decrease, cfg.curvature);
    let alpha_max = cfg.max_step_norm / norm(dir);
    let zero = Probe { alpha: 0.0, f: fx, d: d0, x: x.to_vec(), g: g.to_vec() };
    let armijo = |p: &Probe| p.f <= fx + c1 * p.alpha * d0;
    let strong = |p: &Probe| p.d.abs() <= -c2 * d0;

    let mut prev = zero;
    let mut alpha = first.min(alpha_max);
    let mut accepted = None;
    for i in 0..60 {
        let cur = probe(obj, x, dir, alpha)?;
        if !armijo(&cur) || (i > 0 && cur.f >= prev.f) {
            accepted = zoom(obj, x, fx, d0, dir, prev, cur, cfg)?;
            break;
        }
        if strong(&cur) {
            accepted = Some(cur);
            break;
        }
        if cur.d >= 0.0 {
            accepted = zoom(obj, x, fx, d0, dir, cur, prev, cfg)?;
            break;
        }
        if alpha >= alpha_max {
            return Ok(Search::Unbounded { x: cur.x, f: cur.f, g: cur.g });
        }
        prev = cur;
        alpha = (2.0 * alpha).min(alpha_max);
    }
    let Some(best) = accepted else { return Ok(Search::Failed) };
    // Secant refinement on the slope: exact for quadratics.
    if best.d.abs() > 1e-6 * d0.abs() && best.d != d0 {
        let t = best.alpha * d0 / (d0 - best.d);
        if t.is_finite() && t > 0.0 && t <= alpha_max {
            let refined = probe(obj, x, dir, t)?;
            if refined.f <= best.f && armijo(&refined) && strong(&refined) {
                return Ok(Search::Accepted { x: refined.x, f: refined.f, g: refined.g });
            }
        }
    }
    Ok(Search::Accepted { x: best.x, f: best.f, g: best.g })
}

#[allow(clippy::too_many_arguments)]
fn zoom<F: FnMut(&[f64], &mut [f64]) -> f64>(
    obj: &mut Counted<F>,
    x: &[f64],
    fx: f64,
    d0: f64,
    dir: &[f64],
    mut lo: Probe,
    mut hi: Probe,
    cfg: &SolverConfig,
) -> Result<Option<Probe>> {
    let (c1, c2) = (cfg.sufficient_decrease, cfg.curvature);
    for _ in 0..60 {
        if (hi.alpha - lo.alpha).abs() <= 1e-16 * lo.alpha.abs().max(1.0) {
            break;
        }
        let alpha = cubic_min(&lo, &hi);
        let cur = probe(obj, x, dir, alpha)?;
        if cur.f > fx + c1 * alpha * d0 || cur.f >= lo.f {
            hi = cur;
        } else {
            if cur.d.abs() <= -c2 * d0 {
                return Ok(Some(cur));
            }
            if cur.d * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = cur;
        }
    }
    Ok((lo.alpha > 0.0 && lo.f < fx).then_some(lo))
}

fn projected_search<F: FnMut(&[f64], &mut [f64]) -> f64>(
    obj: &mut Counted<F>,
    x: &[f64],
    fx: f64,
    g: &[f64],
    dir: &[f64],
    first: f64,
    cfg: &SolverConfig,
) -> Result<Search> {
    let mut alpha = first;
    let mut gn = vec![0.0; x.len()];
    for _ in 0..80 {
        let mut xn: Vec<f64> = x.iter().zip(dir).map(|(a, b)| a + alpha * b).collect();
        project_nonpositive(&mut xn);
        let moved: Vec<f64> = xn.iter().zip(x).map(|(a, b)| a - b).collect();
        let fnew = obj.eval(&xn, &mut gn)?;
        if fnew <= fx + cfg.sufficient_decrease * dot(g, &moved) && fnew <= fx {
            if norm(&moved) == 0.0 {
                return Ok(Search::Failed);
            }
            return Ok(Search::Accepted { x: xn, f: fnew, g: gn });
        }
        alpha *= cfg.backtrack;
    }
    Ok(Search::Failed)
}

/// Worst relative error between `f`'s gradient and central differences,
/// with each coordinate's error scaled by `max(|finite difference|, 1)`.
pub fn gradient_check<F>(mut f: F, x: &[f64], step: f64) -> f64
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x.len();
    let mut g = vec![0.0; n];
    f(x, &mut g);
    let mut scratch = vec![0.0; n];
    let mut worst: f64 = 0.0;
    let mut xp = x.to_vec();
    for i in 0..n {
        xp[i] = x[i] + step;
        let fp = f(&xp, &mut scratch);
        xp[i] = x[i] - step;
        let fm = f(&xp, &mut scratch);
        xp[i] = x[i];
        let fd = (fp - fm) / (2.0 * step);
        worst = worst.max((fd - g[i]).abs() / fd.abs().max(1.0));
    }
    worst
}
