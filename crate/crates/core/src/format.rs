//! Plain-text files for grids, kernels, policies, distributions, cost tables
//! and Gaussian-linear models.
//!
//! Every file opens with a `klioc <kind>` line, followed by header lines and
//! then body lines. Blank lines and lines starting with `#` are ignored.
//! Reals are written in Rust's shortest round-trip form, so reading back a
//! written file reproduces every value bit for bit.
//!
//! ```text
//! klioc transition
//! state_axis -3.141592653589793 3.141592653589793 25
//! state_axis -5 5 25
//! action_axis -2.5 2.5 11
//! steps 1
//! 1 0 0 0: 0.75          step, state, action, next state (flat indices): mass
//! ```
//!
//! | kind           | body line           |
//! |----------------|---------------------|
//! | `transition`   | `k x u x': mass`    |
//! | `policy`       | `k x u: mass`       |
//! | `distribution` | `x: mass`           |
//! | `cost`         | `k x: value`        |
//!
//! Only nonzero masses are listed; cost files list every cell. `steps 1`
//! marks a stationary table. A `gaussian_model` file instead holds a
//! `horizon` line and dense blocks introduced by `matrix <name> <rows> <cols>`
//! or `vector <name> <len>`, one matrix row per line.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::{Axis, GridSpace};
use crate::kernel::{CostTable, PolicyKernel, SparseRows, TransitionKernel};
use crate::lqg::GaussianLinearModel;
use crate::prob::DiscreteDistribution;

struct Lines<'a> {
    inner: std::iter::Peekable<Box<dyn Iterator<Item = (usize, &'a str)> + 'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        let it: Box<dyn Iterator<Item = (usize, &'a str)>> =
            Box::new(text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty() && !l.starts_with('#')));
        Lines { inner: it.peekable(), last: 0 }
    }

    fn next(&mut self) -> Option<(usize, &'a str)> {
        let n = self.inner.next();
        if let Some((line, _)) = n {
            self.last = line;
        }
        n
    }

    fn peek_keyword(&mut self) -> Option<&'a str> {
        self.inner.peek().and_then(|(_, l)| l.split_whitespace().next())
    }

    fn expect(&mut self, what: &str) -> Result<(usize, &'a str)> {
        self.next().ok_or_else(|| Error::Parse { line: self.last + 1, msg: format!("unexpected end of file, expected {what}") })
    }
}

fn perr(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn num<T: std::str::FromStr>(line: usize, tok: &str) -> Result<T> {
    tok.parse().map_err(|_| perr(line, format!("cannot parse `{tok}`")))
}

fn expect_kind(lines: &mut Lines, kind: &str) -> Result<()> {
    let (line, text) = lines.expect("file kind")?;
    let found: Vec<&str> = text.split_whitespace().collect();
    if found != ["klioc", kind] {
        return Err(perr(line, format!("expected `klioc {kind}`, found `{text}`")));
    }
    Ok(())
}

fn write_axes(out: &mut String, keyword: &str, grid: &GridSpace) {
    for a in grid.axes() {
        let _ = writeln!(out, "{keyword} {} {} {}", a.lower, a.upper, a.bins);
    }
}

fn read_axes(lines: &mut Lines, keyword: &str) -> Result<Arc<GridSpace>> {
    let mut axes = Vec::new();
    let mut first = lines.last + 1;
    while lines.peek_keyword() == Some(keyword) {
        let (line, text) = lines.next().unwrap();
        if axes.is_empty() {
            first = line;
        }
        let t: Vec<&str> = text.split_whitespace().collect();
        if t.len() != 4 {
            return Err(perr(line, format!("`{keyword}` needs lower, upper and bins")));
        }
        let axis = Axis::new(num(line, t[1])?, num(line, t[2])?, num(line, t[3])?).map_err(|e| perr(line, e.to_string()))?;
        axes.push(axis);
    }
    if axes.is_empty() {
        return Err(perr(first, format!("missing `{keyword}` lines")));
    }
    Ok(Arc::new(GridSpace::new(axes).map_err(|e| perr(first, e.to_string()))?))
}

fn read_steps(lines: &mut Lines) -> Result<usize> {
    let (line, text) = lines.expect("`steps`")?;
    match text.split_whitespace().collect::<Vec<_>>()[..] {
        ["steps", n] => {
            let n: usize = num(line, n)?;
            if n == 0 {
                return Err(perr(line, "`steps` must be at least 1"));
            }
            Ok(n)
        }
        _ => Err(perr(line, "expected `steps <count>`")),
    }
}

/// Parses `[k] i j ...: value`, checking every index against its bound.
fn read_entry(line: usize, text: &str, bounds: &[usize], step_count: Option<usize>) -> Result<(Vec<usize>, f64)> {
    let (lhs, rhs) = text.split_once(':').ok_or_else(|| perr(line, "expected `indices: value`"))?;
    let idx: Vec<usize> = lhs.split_whitespace().map(|t| num(line, t)).collect::<Result<_>>()?;
    let expected = bounds.len() + step_count.is_some() as usize;
    if idx.len() != expected {
        return Err(perr(line, format!("expected {expected} indices, found {}", idx.len())));
    }
    let (offset, mut out) = match step_count {
        Some(n) => {
            if idx[0] == 0 || idx[0] > n {
                return Err(perr(line, format!("step {} outside 1..={n}", idx[0])));
            }
            (1, vec![idx[0] - 1])
        }
        None => (0, Vec::new()),
    };
    for (i, &b) in bounds.iter().enumerate() {
        if idx[offset + i] >= b {
            return Err(perr(line, format!("index {} out of range (< {b})", idx[offset + i])));
        }
        out.push(idx[offset + i]);
    }
    let value: f64 = num(line, rhs.trim())?;
    if !value.is_finite() {
        return Err(perr(line, "values must be finite"));
    }
    Ok((out, value))
}

fn body_error(line: usize) -> impl Fn(Error) -> Error {
    move |e| perr(line, e.to_string())
}

pub fn write_transition(kernel: &TransitionKernel) -> String {
    let mut out = String::from("klioc transition\n");
    write_axes(&mut out, "state_axis", kernel.states());
    write_axes(&mut out, "action_axis", kernel.actions());
    let _ = writeln!(out, "steps {}", kernel.steps().len());
    let nu = kernel.n_actions();
    for (k, step) in kernel.steps().iter().enumerate() {
        for r in 0..step.rows() {
            for (y, m) in step.row(r).iter() {
                let _ = writeln!(out, "{} {} {} {y}: {m}", k + 1, r / nu, r % nu);
            }
        }
    }
    out
}

pub fn read_transition(text: &str) -> Result<TransitionKernel> {
    let mut lines = Lines::new(text);
    expect_kind(&mut lines, "transition")?;
    let states = read_axes(&mut lines, "state_axis")?;
    let actions = read_axes(&mut lines, "action_axis")?;
    let n_steps = read_steps(&mut lines)?;
    let (ns, nu) = (states.len(), actions.len());
    let mut rows: Vec<BTreeMap<(usize, usize), Vec<(usize, f64)>>> = vec![BTreeMap::new(); n_steps];
    let mut end = lines.last;
    while let Some((line, text)) = lines.next() {
        end = line;
        let (i, m) = read_entry(line, text, &[ns, nu, ns], Some(n_steps))?;
        rows[i[0]].entry((i[1], i[2])).or_default().push((i[3], m));
    }
    let mut steps = Vec::with_capacity(n_steps);
    for map in rows {
        let mut sparse = SparseRows::new();
        for x in 0..ns {
            for u in 0..nu {
                let mut entries = map.get(&(x, u)).cloned().unwrap_or_default();
                entries.sort_by_key(|e| e.0);
                sparse.push_row(entries).map_err(body_error(end))?;
            }
        }
        steps.push(sparse);
    }
    TransitionKernel::new(states, actions, steps).map_err(body_error(end))
}

pub fn write_policy(policy: &PolicyKernel) -> String {
    let mut out = String::from("klioc policy\n");
    write_axes(&mut out, "state_axis", policy.states());
    write_axes(&mut out, "action_axis", policy.actions());
    let _ = writeln!(out, "steps {}", policy.steps().len());
    let nu = policy.actions().len();
    for (k, table) in policy.steps().iter().enumerate() {
        for (r, &m) in table.iter().enumerate() {
            if m != 0.0 {
                let _ = writeln!(out, "{} {} {}: {m}", k + 1, r / nu, r % nu);
            }
        }
    }
    out
}

pub fn read_policy(text: &str) -> Result<PolicyKernel> {
    let mut lines = Lines::new(text);
    expect_kind(&mut lines, "policy")?;
    let states = read_axes(&mut lines, "state_axis")?;
    let actions = read_axes(&mut lines, "action_axis")?;
    let n_steps = read_steps(&mut lines)?;
    let (ns, nu) = (states.len(), actions.len());
    let mut tables = vec![vec![0.0; ns * nu]; n_steps];
    let mut end = lines.last;
    while let Some((line, text)) = lines.next() {
        end = line;
        let (i, m) = read_entry(line, text, &[ns, nu], Some(n_steps))?;
        tables[i[0]][i[1] * nu + i[2]] = m;
    }
    PolicyKernel::new(states, actions, tables).map_err(body_error(end))
}

pub fn write_distribution(dist: &DiscreteDistribution) -> String {
    let mut out = String::from("klioc distribution\n");
    write_axes(&mut out, "state_axis", dist.grid());
    for (x, &m) in dist.mass().iter().enumerate() {
        if m != 0.0 {
            let _ = writeln!(out, "{x}: {m}");
        }
    }
    out
}

pub fn read_distribution(text: &str) -> Result<DiscreteDistribution> {
    let mut lines = Lines::new(text);
    expect_kind(&mut lines, "distribution")?;
    let grid = read_axes(&mut lines, "state_axis")?;
    let mut mass = vec![0.0; grid.len()];
    let mut end = lines.last;
    while let Some((line, text)) = lines.next() {
        end = line;
        let (i, m) = read_entry(line, text, &[grid.len()], None)?;
        mass[i[0]] = m;
    }
    DiscreteDistribution::new(grid, mass).map_err(body_error(end))
}

pub fn write_cost(costs: &CostTable) -> String {
    let mut out = String::from("klioc cost\n");
    write_axes(&mut out, "state_axis", costs.states());
    let _ = writeln!(out, "steps {}", costs.steps().len());
    for (k, table) in costs.steps().iter().enumerate() {
        for (x, &c) in table.iter().enumerate() {
            let _ = writeln!(out, "{} {x}: {c}", k + 1);
        }
    }
    out
}

pub fn read_cost(text: &str) -> Result<CostTable> {
    let mut lines = Lines::new(text);
    expect_kind(&mut lines, "cost")?;
    let grid = read_axes(&mut lines, "state_axis")?;
    let n_steps = read_steps(&mut lines)?;
    let mut tables = vec![vec![f64::NAN; grid.len()]; n_steps];
    let mut end = lines.last;
    while let Some((line, text)) = lines.next() {
        end = line;
        let (i, c) = read_entry(line, text, &[grid.len()], Some(n_steps))?;
        tables[i[0]][i[1]] = c;
    }
    if let Some((k, x)) = tables.iter().enumerate().find_map(|(k, t)| t.iter().position(|c| c.is_nan()).map(|x| (k, x))) {
        return Err(perr(end, format!("cost missing for step {}, state {x}", k + 1)));
    }
    CostTable::new(grid, tables).map_err(body_error(end))
}

fn write_matrix(out: &mut String, name: &str, m: &DMatrix<f64>) {
    let _ = writeln!(out, "matrix {name} {} {}", m.nrows(), m.ncols());
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| m[(r, c)].to_string()).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
}

fn write_vector(out: &mut String, name: &str, v: &DVector<f64>) {
    let _ = writeln!(out, "vector {name} {}", v.len());
    let row: Vec<String> = v.iter().map(f64::to_string).collect();
    let _ = writeln!(out, "{}", row.join(" "));
}

pub fn write_gaussian_model(model: &GaussianLinearModel) -> String {
    let mut out = String::from("klioc gaussian_model\n");
    let _ = writeln!(out, "horizon {}", model.horizon);
    for (name, m) in [("A", &model.a), ("B", &model.b), ("Sigma", &model.sigma), ("W", &model.w), ("R", &model.r), ("Q", &model.q)] {
        write_matrix(&mut out, name, m);
    }
    write_vector(&mut out, "x_d", &model.x_d);
    write_vector(&mut out, "u_d", &model.u_d);
    if let Some(c) = &model.cost_center {
        write_vector(&mut out, "x_c", c);
    }
    out
}

fn read_row(lines: &mut Lines, width: usize) -> Result<Vec<f64>> {
    let (line, text) = lines.expect("a row of numbers")?;
    let row: Vec<f64> = text.split_whitespace().map(|t| num(line, t)).collect::<Result<_>>()?;
    if row.len() != width {
        return Err(perr(line, format!("expected {width} numbers, found {}", row.len())));
    }
    Ok(row)
}

pub fn read_gaussian_model(text: &str) -> Result<GaussianLinearModel> {
    let mut lines = Lines::new(text);
    expect_kind(&mut lines, "gaussian_model")?;
    let mut horizon = None;
    let mut mats: BTreeMap<String, DMatrix<f64>> = BTreeMap::new();
    let mut vecs: BTreeMap<String, DVector<f64>> = BTreeMap::new();
    while let Some((line, text)) = lines.next() {
        let t: Vec<&str> = text.split_whitespace().collect();
        match t[..] {
            ["horizon", n] => horizon = Some(num::<usize>(line, n)?),
            ["matrix", name, r, c] => {
                let (r, c): (usize, usize) = (num(line, r)?, num(line, c)?);
                let mut data = Vec::with_capacity(r * c);
                for _ in 0..r {
                    data.extend(read_row(&mut lines, c)?);
                }
                if mats.insert(name.to_string(), DMatrix::from_row_slice(r, c, &data)).is_some() {
                    return Err(perr(line, format!("matrix {name} given twice")));
                }
            }
            ["vector", name, n] => {
                let v = read_row(&mut lines, num(line, n)?)?;
                if vecs.insert(name.to_string(), DVector::from_vec(v)).is_some() {
                    return Err(perr(line, format!("vector {name} given twice")));
                }
            }
            _ => return Err(perr(line, format!("unexpected line `{text}`"))),
        }
    }
    let end = lines.last;
    let mut take_m = |name: &str| mats.remove(name).ok_or_else(|| perr(end, format!("missing matrix {name}")));
    let (a, b, sigma, w, r, q) = (take_m("A")?, take_m("B")?, take_m("Sigma")?, take_m("W")?, take_m("R")?, take_m("Q")?);
    if let Some(name) = mats.keys().next() {
        return Err(perr(end, format!("unknown matrix {name}")));
    }
    let x_d = vecs.remove("x_d").ok_or_else(|| perr(end, "missing vector x_d"))?;
    let u_d = vecs.remove("u_d").ok_or_else(|| perr(end, "missing vector u_d"))?;
    let cost_center = vecs.remove("x_c");
    if let Some(name) = vecs.keys().next() {
        return Err(perr(end, format!("unknown vector {name}")));
    }
    let model = GaussianLinearModel { a, b, sigma, w, r, q, x_d, u_d, cost_center, horizon: horizon.ok_or_else(|| perr(end, "missing horizon"))? };
    model.validate()?;
    Ok(model)
}

fn load<T>(path: &Path, read: fn(&str) -> Result<T>) -> Result<T> {
    read(&std::fs::read_to_string(path)?)
}

pub fn load_transition(path: &Path) -> Result<TransitionKernel> {
    load(path, read_transition)
}

pub fn load_policy(path: &Path) -> Result<PolicyKernel> {
    load(path, read_policy)
}

pub fn load_distribution(path: &Path) -> Result<DiscreteDistribution> {
    load(path, read_distribution)
}

pub fn load_cost(path: &Path) -> Result<CostTable> {
    load(path, read_cost)
}

pub fn load_gaussian_model(path: &Path) -> Result<GaussianLinearModel> {
    load(path, read_gaussian_model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{random_distribution, random_problem};
    use crate::lqg::scalar_model;

    #[test]
    fn kernels_round_trip_exactly() {
        let prob = random_problem(3, 4, 3, 11);
        let text = write_transition(prob.target());
        assert_eq!(&read_transition(&text).unwrap(), prob.target());
        let pol = prob.reference().policy.clone();
        assert_eq!(read_policy(&write_policy(&pol)).unwrap(), pol);
        assert_eq!(read_cost(&write_cost(prob.costs())).unwrap(), *prob.costs());
        let d = random_distribution(7, 3);
        assert_eq!(read_distribution(&write_distribution(&d)).unwrap(), d);
    }

    #[test]
    fn writing_is_deterministic_and_stable() {
        let prob = random_problem(2, 3, 2, 5);
        let once = write_transition(prob.target());
        let twice = write_transition(&read_transition(&once).unwrap());
        assert_eq!(once, twice);
    }

    #[test]
    fn gaussian_model_round_trips() {
        let mut m = scalar_model(0.9, 1.0, 0.2, 1.0, 2.0, 0.5, 0.1, 0.3, 4);
        m.cost_center = Some(DVector::from_element(1, -0.25));
        assert_eq!(read_gaussian_model(&write_gaussian_model(&m)).unwrap(), m);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "klioc distribution\nstate_axis 0 1 2\n0: 0.5\n# note\n1: x\n";
        match read_distribution(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("{other:?}"),
        }
        let bad_index = "klioc distribution\nstate_axis 0 1 2\n2: 1\n";
        assert!(matches!(read_distribution(bad_index), Err(Error::Parse { line: 3, .. })));
        let wrong_kind = "klioc policy\n";
        assert!(matches!(read_distribution(wrong_kind), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn unnormalized_rows_are_rejected() {
        let text = "klioc distribution\nstate_axis 0 1 2\n0: 0.5\n1: 0.4\n";
        assert!(read_distribution(text).is_err());
    }
}
