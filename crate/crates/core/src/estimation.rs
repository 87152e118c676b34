//! Trajectory datasets and histogram estimation of transition kernels.
//!
//! ## Dataset file format
//!
//! ```text
//! # dataset state_dims=2 action_dims=1
//! 1,0.1,-0.3,0.5
//! 2,0.12,-0.2,-1
//! 2,0.15,-0.1
//! ```
//!
//! Each pair line is `k, x_{k-1}..., u_k...`; the final line `N, x_N...`
//! carries only the terminal state. A database file is a concatenation of
//! such blocks, one header per dataset. Blank lines are ignored.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::GridSpace;
use crate::kernel::{SparseRows, TransitionKernel};
use crate::par::Execution;

/// One trajectory: states `x_0..x_N` and actions `u_1..u_N`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    states: Vec<Vec<f64>>,
    actions: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn new(states: Vec<Vec<f64>>, actions: Vec<Vec<f64>>) -> Result<Self> {
        if states.len() != actions.len() + 1 {
            return Err(Error::Structure(format!(
                "dataset has {} states for {} actions; expected one more state than actions",
                states.len(),
                actions.len()
            )));
        }
        let n = states[0].len();
        if n == 0 || states.iter().any(|s| s.len() != n) {
            return Err(Error::Structure("states must share a positive dimension".into()));
        }
        if let Some(p) = actions.first().map(Vec::len) {
            if p == 0 || actions.iter().any(|a| a.len() != p) {
                return Err(Error::Structure("actions must share a positive dimension".into()));
            }
        }
        let finite = |v: &Vec<f64>| v.iter().all(|x| x.is_finite());
        if !states.iter().all(finite) || !actions.iter().all(finite) {
            return Err(Error::Invalid("dataset contains non-finite values".into()));
        }
        Ok(Dataset { states, actions })
    }

    /// Number of `(x_{k-1}, u_k)` pairs.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn actions(&self) -> &[Vec<f64>] {
        &self.actions
    }

    pub fn state_dims(&self) -> usize {
        self.states[0].len()
    }

    pub fn action_dims(&self) -> Option<usize> {
        self.actions.first().map(Vec::len)
    }

    /// Pair `k` in `1..=len`: `(x_{k-1}, u_k)`.
    pub fn pair(&self, k: usize) -> (&[f64], &[f64]) {
        (&self.states[k - 1], &self.actions[k - 1])
    }

    pub fn terminal(&self) -> &[f64] {
        self.states.last().unwrap()
    }

    fn write_block(&self, out: &mut String) {
        let p = self.action_dims().unwrap_or(0);
        writeln!(out, "# dataset state_dims={} action_dims={p}", self.state_dims()).unwrap();
        for k in 1..=self.len() {
            let (x, u) = self.pair(k);
            write!(out, "{k}").unwrap();
            for v in x.iter().chain(u) {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        write!(out, "{}", self.len()).unwrap();
        for v in self.terminal() {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        self.write_block(&mut s);
        s
    }
}

/// A collection of datasets from repeated experiments.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Database {
    pub datasets: Vec<Dataset>,
}

impl Database {
    pub fn new(datasets: Vec<Dataset>) -> Self {
        Database { datasets }
    }

    pub fn transitions(&self) -> usize {
        self.datasets.iter().map(Dataset::len).sum()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for d in &self.datasets {
            d.write_block(&mut s);
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut datasets = Vec::new();
        let mut current: Option<Block> = None;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(b) = current.take() {
                    datasets.push(b.finish()?);
                }
                current = Some(Block::open(rest, line_no)?);
                continue;
            }
            let block = current.as_mut().ok_or(Error::Parse { line: line_no, msg: "data line before dataset header".into() })?;
            block.push(line, line_no)?;
        }
        if let Some(b) = current.take() {
            datasets.push(b.finish()?);
        }
        if datasets.is_empty() {
            return Err(Error::Parse { line: 0, msg: "no dataset found".into() });
        }
        Ok(Database { datasets })
    }
}

struct Block {
    header_line: usize,
    n: usize,
    p: usize,
    states: Vec<Vec<f64>>,
    actions: Vec<Vec<f64>>,
    terminal_seen: Option<usize>,
}

impl Block {
    fn open(header: &str, line: usize) -> Result<Self> {
        let mut n = None;
        let mut p = None;
        let mut words = header.split_whitespace();
        if words.next() != Some("dataset") {
            return Err(Error::Parse { line, msg: "expected '# dataset' header".into() });
        }
        for w in words {
            let (key, value) = w.split_once('=').ok_or_else(|| Error::Parse { line, msg: format!("malformed header field '{w}'") })?;
            let v: usize = value.parse().map_err(|_| Error::Parse { line, msg: format!("bad integer '{value}'") })?;
            match key {
                "state_dims" => n = Some(v),
                "action_dims" => p = Some(v),
                _ => return Err(Error::Parse { line, msg: format!("unknown header field '{key}'") }),
            }
        }
        match (n, p) {
            (Some(n), Some(p)) if n > 0 => Ok(Block { header_line: line, n, p, states: vec![], actions: vec![], terminal_seen: None }),
            _ => Err(Error::Parse { line, msg: "header needs state_dims>0 and action_dims".into() }),
        }
    }

    fn push(&mut self, line: &str, line_no: usize) -> Result<()> {
        let err = |msg: String| Error::Parse { line: line_no, msg };
        if let Some(t) = self.terminal_seen {
            return Err(err(format!("record after terminal state on line {t}")));
        }
        let mut fields = line.split(',').map(str::trim);
        let k: usize = fields.next().and_then(|f| f.parse().ok()).ok_or_else(|| err("first field must be the step index".into()))?;
        let values = fields.map(|f| f.parse::<f64>().map_err(|_| err(format!("cannot parse '{f}' as a number")))).collect::<Result<Vec<_>>>()?;
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(err(format!("non-finite value {v}")));
        }
        let expected_k = self.actions.len() + 1;
        if values.len() == self.n + self.p && self.p > 0 {
            if k != expected_k {
                return Err(err(format!("step index {k}, expected {expected_k}")));
            }
            self.states.push(values[..self.n].to_vec());
            self.actions.push(values[self.n..].to_vec());
        } else if values.len() == self.n {
            if k != self.actions.len() {
                return Err(err(format!("terminal index {k}, expected {}", self.actions.len())));
            }
            self.states.push(values);
            self.terminal_seen = Some(line_no);
        } else {
            return Err(err(format!("expected {} or {} values after the step index, found {}", self.n + self.p, self.n, values.len())));
        }
        Ok(())
    }

    fn finish(self) -> Result<Dataset> {
        if self.terminal_seen.is_none() {
            return Err(Error::Parse { line: self.header_line, msg: "dataset has no terminal state line".into() });
        }
        Dataset::new(self.states, self.actions).map_err(|e| Error::Parse { line: self.header_line, msg: e.to_string() })
    }
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, ds.to_text())?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let mut db = load_database(path)?;
    if db.datasets.len() != 1 {
        return Err(Error::Invalid(format!("expected one dataset, file holds {}", db.datasets.len())));
    }
    Ok(db.datasets.pop().unwrap())
}

pub fn save_database(db: &Database, path: &Path) -> Result<()> {
    std::fs::write(path, db.to_text())?;
    Ok(())
}

pub fn load_database(path: &Path) -> Result<Database> {
    Database::parse(&std::fs::read_to_string(path)?)
}

/// What an estimated kernel emits for `(x, u)` pairs never seen in the data
/// when smoothing is zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum UnvisitedRows {
    #[default]
    Uniform,
    /// Delta at the current cell.
    Stay,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct HistogramOptions {
    pub smoothing: f64,
    pub unvisited: UnvisitedRows,
    pub execution: Execution,
}

/// Counts transitions `(x_{k-1}, u_k) -> x_k` on the grids and normalizes
/// them into a stationary kernel.
pub fn histogram_estimate(db: &Database, states: Arc<GridSpace>, actions: Arc<GridSpace>, opts: &HistogramOptions) -> Result<TransitionKernel> {
    if db.transitions() == 0 {
        return Err(Error::Invalid("cannot estimate a kernel from an empty database".into()));
    }
    if !(opts.smoothing >= 0.0 && opts.smoothing.is_finite()) {
        return Err(Error::Invalid(format!("smoothing must be >= 0, got {}", opts.smoothing)));
    }
    for d in &db.datasets {
        if d.state_dims() != states.dims() || d.action_dims().is_some_and(|p| p != actions.dims()) {
            return Err(Error::Structure("dataset dimensions do not match the grids".into()));
        }
    }
    let (ns, na) = (states.len(), actions.len());
    // Each shard produces sorted (row, next) keys; merging sorted shards keeps
    // the result independent of how the work was split.
    let shards = opts.execution.map(db.datasets.len(), |i| {
        let d = &db.datasets[i];
        let mut keys: Vec<u64> = (1..=d.len())
            .map(|k| {
                let (x, u) = d.pair(k);
                let row = states.index_of(x) * na + actions.index_of(u);
                let next = states.index_of(&d.states()[k]);
                ((row as u64) << 32) | next as u64
            })
            .collect();
        keys.sort_unstable();
        keys
    });
    let mut keys: Vec<u64> = shards.into_iter().flatten().collect();
    keys.sort_unstable();

    let mut rows = SparseRows::new();
    let mut cursor = 0;
    let mut counts: Vec<(usize, f64)> = Vec::new();
    let mut dense = vec![0.0; ns];
    for row in 0..ns * na {
        counts.clear();
        while cursor < keys.len() && (keys[cursor] >> 32) as usize == row {
            let next = (keys[cursor] & 0xffff_ffff) as usize;
            match counts.last_mut() {
                Some((c, n)) if *c == next => *n += 1.0,
                _ => counts.push((next, 1.0)),
            }
            cursor += 1;
        }
        let total: f64 = counts.iter().map(|c| c.1).sum();
        let s = opts.smoothing;
        if s > 0.0 {
            let denom = total + s * ns as f64;
            dense.iter_mut().for_each(|v| *v = s / denom);
            for &(c, n) in &counts {
                dense[c] = (n + s) / denom;
            }
            rows.push_dense(&dense)?;
        } else if total > 0.0 {
            rows.push_row(counts.iter().map(|&(c, n)| (c, n / total)))?;
        } else {
            match opts.unvisited {
                UnvisitedRows::Uniform => rows.push_row((0..ns).map(|c| (c, 1.0 / ns as f64)))?,
                UnvisitedRows::Stay => rows.push_row([(row / na, 1.0)])?,
            }
        }
    }
    TransitionKernel::stationary(states, actions, rows)
}

/// Indices `k` of the pairs to keep when consecutive values of the angle
/// coordinate jump by more than `pi` (a wrap across the `[-pi, pi)` seam).
pub fn filter_angle_wrap(ds: &Dataset, coord: usize) -> Vec<usize> {
    (1..=ds.len()).filter(|&k| (ds.states()[k][coord] - ds.states()[k - 1][coord]).abs() <= std::f64::consts::PI).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ds(states: &[f64], actions: &[f64]) -> Dataset {
        Dataset::new(states.iter().map(|&x| vec![x]).collect(), actions.iter().map(|&u| vec![u]).collect()).unwrap()
    }

    fn grids() -> (Arc<GridSpace>, Arc<GridSpace>) {
        (Arc::new(GridSpace::indexed(3).unwrap()), Arc::new(GridSpace::indexed(2).unwrap()))
    }

    #[test]
    fn histogram_rows() {
        let (s, a) = grids();
        let db = Database::new(vec![ds(&[0.0, 2.0], &[1.0]), ds(&[0.0, 1.0], &[1.0])]);
        let k = histogram_estimate(&db, s.clone(), a.clone(), &HistogramOptions::default()).unwrap();
        assert_eq!(k.row(1, 0, 1).to_dense(3), vec![0.0, 0.5, 0.5]);
        assert_eq!(k.row(1, 2, 0).to_dense(3), vec![1.0 / 3.0; 3]);
        let single = Database::new(vec![ds(&[0.0, 2.0], &[1.0])]);
        let k = histogram_estimate(&single, s.clone(), a.clone(), &HistogramOptions::default()).unwrap();
        assert_eq!(k.row(1, 0, 1).to_dense(3), vec![0.0, 0.0, 1.0]);
        let stay = HistogramOptions { unvisited: UnvisitedRows::Stay, ..Default::default() };
        let k = histogram_estimate(&single, s.clone(), a.clone(), &stay).unwrap();
        assert_eq!(k.row(1, 1, 0).to_dense(3), vec![0.0, 1.0, 0.0]);
        let smooth = HistogramOptions { smoothing: 1.0, ..Default::default() };
        let k = histogram_estimate(&single, s, a, &smooth).unwrap();
        assert_eq!(k.row(1, 0, 1).to_dense(3), vec![0.25, 0.25, 0.5]);
    }

    #[test]
    fn empty_database_rejected() {
        let (s, a) = grids();
        assert!(histogram_estimate(&Database::default(), s, a, &HistogramOptions::default()).is_err());
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        assert!(Database::parse("").is_err());
        let bad = "# dataset state_dims=1 action_dims=1\n1,0.0,1.0\n2,abc,1.0\n";
        match Database::parse(bad) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let missing_terminal = "# dataset state_dims=1 action_dims=1\n1,0.0,1.0\n";
        assert!(Database::parse(missing_terminal).is_err());
    }

    #[test]
    fn wrap_filter_drops_seam_crossings() {
        let d = ds(&[3.0, -3.0, -2.9, 3.1], &[0.0, 0.0, 0.0]);
        assert_eq!(filter_angle_wrap(&d, 0), vec![2]);
    }

    proptest! {
        #[test]
        fn text_round_trip(
            xs in proptest::collection::vec(proptest::num::f64::NORMAL, 2..20),
            seed in any::<f64>().prop_filter("finite", |v| v.is_finite()),
        ) {
            let n = xs.len() - 1;
            let states: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x, x * 0.5]).collect();
            let actions: Vec<Vec<f64>> = (0..n).map(|i| vec![seed / (i as f64 + 1.0)]).collect();
            let d = Dataset::new(states, actions).unwrap();
            let db = Database::new(vec![d.clone(), d]);
            prop_assert_eq!(Database::parse(&db.to_text()).unwrap(), db);
        }
    }
}
