use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// A `d`-dimensional path sampled on a uniform grid, starting at the origin.
///
/// Values are stored row-major: row `i` is `omega_{t_i}`. A path with `k`
/// steps covers `[0, k h]`; prefixes of a full path are paths in their own
/// right, which is how processes `u(t, omega)` are evaluated on `omega_{.^t}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretePath {
    step: f64,
    dim: usize,
    values: Vec<f64>,
}

impl DiscretePath {
    /// The zero-length path `[0]` in dimension `dim`.
    pub fn origin(step: f64, dim: usize) -> Self {
        assert!(dim >= 1, "dimension must be >= 1");
        Self {
            step,
            dim,
            values: vec![0.0; dim],
        }
    }

    pub fn from_rows(step: f64, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dimension must be >= 1"));
        }
        if !(step.is_finite() && step > 0.0) {
            return Err(invalid(format!("step must be finite and > 0, got {step}")));
        }
        if values.is_empty() || values.len() % dim != 0 {
            return Err(invalid(format!(
                "value count {} is not a positive multiple of dimension {dim}",
                values.len()
            )));
        }
        if values[..dim].iter().any(|v| *v != 0.0) {
            return Err(invalid("path must start at the origin"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("path values must be finite"));
        }
        Ok(Self { step, dim, values })
    }

    /// One-dimensional path from its sampled values.
    pub fn scalar(step: f64, values: &[f64]) -> Result<Self> {
        Self::from_rows(step, 1, values.to_vec())
    }

    pub(crate) fn from_rows_unchecked(step: f64, dim: usize, values: Vec<f64>) -> Self {
        debug_assert!(values.len() % dim == 0 && !values.is_empty());
        Self { step, dim, values }
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of grid steps covered (rows minus one).
    pub fn steps(&self) -> usize {
        self.values.len() / self.dim - 1
    }

    pub fn end_time(&self) -> f64 {
        self.steps() as f64 * self.step
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn last(&self) -> &[f64] {
        self.row(self.steps())
    }

    /// Coordinate `coord` at row `i`.
    pub fn at(&self, i: usize, coord: usize) -> f64 {
        self.values[i * self.dim + coord]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim)
    }

    /// The stopped path `omega_{. ^ t_i}` as a path with `i` steps.
    pub fn prefix(&self, i: usize) -> DiscretePath {
        let i = i.min(self.steps());
        Self {
            step: self.step,
            dim: self.dim,
            values: self.values[..(i + 1) * self.dim].to_vec(),
        }
    }

    /// Appends `extra` flat steps (the path held constant).
    pub fn extend_flat(&self, extra: usize) -> DiscretePath {
        let mut values = self.values.clone();
        let last = self.last().to_vec();
        for _ in 0..extra {
            values.extend_from_slice(&last);
        }
        Self {
            step: self.step,
            dim: self.dim,
            values,
        }
    }

    /// Copy with the final value of coordinate `coord` moved by `bump`.
    pub fn bump_last(&self, coord: usize, bump: f64) -> DiscretePath {
        let mut out = self.clone();
        let n = out.values.len();
        out.values[n - self.dim + coord] += bump;
        out
    }

    /// The suffix after index `i`, re-based to start at the origin.
    pub fn suffix_from(&self, i: usize) -> DiscretePath {
        let base = self.row(i).to_vec();
        let mut values = Vec::with_capacity((self.steps() - i + 1) * self.dim);
        for r in i..=self.steps() {
            for (c, b) in base.iter().enumerate() {
                values.push(self.at(r, c) - b);
            }
        }
        Self {
            step: self.step,
            dim: self.dim,
            values,
        }
    }

    pub(crate) fn same_step(&self, other_step: f64) -> bool {
        (self.step - other_step).abs() <= 1e-12 * self.step.max(other_step)
    }

    /// CSV with header `t,x1..xd`, one row per grid point.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for c in 1..=self.dim {
            let _ = write!(out, ",x{c}");
        }
        out.push('\n');
        for (i, row) in self.rows().enumerate() {
            let _ = write!(out, "{}", i as f64 * self.step);
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| invalid("empty CSV"))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.first() != Some(&"t") || cols.len() < 2 {
            return Err(invalid(format!("bad path CSV header '{header}'")));
        }
        for (k, c) in cols[1..].iter().enumerate() {
            if *c != format!("x{}", k + 1) {
                return Err(invalid(format!("bad column '{c}' in path CSV header")));
            }
        }
        let dim = cols.len() - 1;
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (ln, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != dim + 1 {
                return Err(invalid(format!("row {} has {} fields", ln + 1, fields.len())));
            }
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| invalid(format!("row {}: '{s}': {e}", ln + 1)))
            };
            times.push(parse(fields[0])?);
            for f in &fields[1..] {
                values.push(parse(f)?);
            }
        }
        if times.len() < 2 {
            return Err(invalid("path CSV needs at least two rows to fix the step"));
        }
        let step = times[1] - times[0];
        for (i, t) in times.iter().enumerate() {
            let expect = i as f64 * step;
            if (t - expect).abs() > 1e-9 * step.max(expect.abs()) {
                return Err(Error::GridMismatch(format!(
                    "row {i} has time {t}, expected {expect} on a uniform grid"
                )));
            }
        }
        Self::from_rows(step, dim, values)
    }
}

/// A point `(t_i, omega_{. ^ t_i})` of the discrete path space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    path: DiscretePath,
}

impl PathPoint {
    /// The point at the end of `prefix`.
    pub fn new(prefix: DiscretePath) -> Self {
        Self { path: prefix }
    }

    /// `(t_i, omega_{. ^ t_i})` cut from a longer path.
    pub fn on(path: &DiscretePath, index: usize) -> Result<Self> {
        if index > path.steps() {
            return Err(invalid(format!(
                "index {index} beyond path length {}",
                path.steps()
            )));
        }
        Ok(Self {
            path: path.prefix(index),
        })
    }

    pub fn origin(step: f64, dim: usize) -> Self {
        Self::new(DiscretePath::origin(step, dim))
    }

    pub fn index(&self) -> usize {
        self.path.steps()
    }

    pub fn time(&self) -> f64 {
        self.path.end_time()
    }

    pub fn path(&self) -> &DiscretePath {
        &self.path
    }
}

/// `omega (x)_{t_i} omega'`: the prefix followed by the suffix increments.
///
/// The result at row `i + j` is `omega_{t_i} + omega'_{t_j}`.
pub fn concat(prefix: &DiscretePath, suffix: &DiscretePath) -> Result<DiscretePath> {
    if prefix.dim != suffix.dim {
        return Err(Error::DimensionMismatch {
            expected: prefix.dim,
            actual: suffix.dim,
        });
    }
    if !prefix.same_step(suffix.step) {
        return Err(Error::GridMismatch(format!(
            "prefix step {} vs suffix step {}",
            prefix.step, suffix.step
        )));
    }
    if suffix.row(0).iter().any(|v| *v != 0.0) {
        return Err(invalid("suffix path must start at the origin"));
    }
    let base = prefix.last().to_vec();
    let mut values = Vec::with_capacity(prefix.values.len() + suffix.values.len() - prefix.dim);
    values.extend_from_slice(&prefix.values);
    for row in suffix.rows().skip(1) {
        for (b, v) in base.iter().zip(row) {
            values.push(b + v);
        }
    }
    Ok(DiscretePath {
        step: prefix.step,
        dim: prefix.dim,
        values,
    })
}

/// `|t - t'| + sup_s |omega_{s ^ t} - omega'_{s ^ t'}|`.
///
/// The shorter stopped path is extended constantly up to the longer one.
pub fn pseudo_distance(a: &PathPoint, b: &PathPoint) -> Result<f64> {
    let (pa, pb) = (a.path(), b.path());
    if pa.dim != pb.dim {
        return Err(Error::DimensionMismatch {
            expected: pa.dim,
            actual: pb.dim,
        });
    }
    if !pa.same_step(pb.step) {
        return Err(Error::GridMismatch(format!(
            "step {} vs step {}",
            pa.step, pb.step
        )));
    }
    let (ia, ib) = (pa.steps(), pb.steps());
    let mut sup = 0.0f64;
    for s in 0..=ia.max(ib) {
        let (ra, rb) = (pa.row(s.min(ia)), pb.row(s.min(ib)));
        let d = ra
            .iter()
            .zip(rb)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        sup = sup.max(d);
    }
    Ok((a.time() - b.time()).abs() + sup)
}
