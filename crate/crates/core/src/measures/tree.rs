use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::pathspace::{DiscretePath, PathFunctional, PathPoint, TimeGrid};

/// Default depth cap for non-recombining trees (`2^(n+1)` nodes).
pub const DEFAULT_DEPTH_CAP: usize = 22;

/// Levels of a binomial carrier (tree or lattice) with their children links.
///
/// Everything that runs a backward recursion (nonlinear expectations, Snell
/// envelopes, BSDE and scheme solvers) is written against this trait, so the
/// exact non-recombining tree and the recombining lattice share one engine.
pub trait Carrier: Sync {
    fn step(&self) -> f64;
    fn depth(&self) -> usize;
    /// Global grid index of the root.
    fn start_index(&self) -> usize;
    fn width(&self, level: usize) -> usize;
    /// `(up, down)` children of `node`, indices into `level + 1`.
    fn children(&self, level: usize, node: usize) -> (usize, usize);
    /// Current path value `omega_t` at the node.
    fn position(&self, level: usize, node: usize) -> f64;
    /// A path from the origin to the node (the unique one on a tree, a
    /// representative on a lattice).
    fn prefix(&self, level: usize, node: usize) -> DiscretePath;

    fn sqrt_step(&self) -> f64 {
        self.step().sqrt()
    }

    fn time(&self, level: usize) -> f64 {
        (self.start_index() + level) as f64 * self.step()
    }
}

/// Node-indexed real values, one vector per level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeValues {
    levels: Vec<Vec<f64>>,
}

impl NodeValues {
    pub fn from_levels(levels: Vec<Vec<f64>>) -> Self {
        Self { levels }
    }

    pub fn filled<C: Carrier + ?Sized>(carrier: &C, levels: usize, value: f64) -> Self {
        Self {
            levels: (0..levels).map(|l| vec![value; carrier.width(l)]).collect(),
        }
    }

    pub fn get(&self, level: usize, node: usize) -> f64 {
        self.levels[level][node]
    }

    pub fn set(&mut self, level: usize, node: usize, value: f64) {
        self.levels[level][node] = value;
    }

    pub fn level(&self, level: usize) -> &[f64] {
        &self.levels[level]
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn root(&self) -> f64 {
        self.levels[0][0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.levels
            .iter()
            .enumerate()
            .flat_map(|(l, v)| v.iter().enumerate().map(move |(i, x)| (l, i, *x)))
    }

    pub fn max_abs(&self) -> f64 {
        self.iter().fold(0.0, |m, (_, _, v)| m.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> NodeValues {
        NodeValues {
            levels: self
                .levels
                .iter()
                .map(|l| l.iter().map(|v| f(*v)).collect())
                .collect(),
        }
    }

    pub fn zip_map(&self, other: &NodeValues, f: impl Fn(f64, f64) -> f64) -> NodeValues {
        NodeValues {
            levels: self
                .levels
                .iter()
                .zip(&other.levels)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect())
                .collect(),
        }
    }

    /// CSV with header `level,node_id,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("level,node_id,value\n");
        for (l, i, v) in self.iter() {
            let _ = writeln!(out, "{l},{i},{v}");
        }
        out
    }
}

/// Width above which a level is processed with rayon.
const PAR_WIDTH: usize = 2048;

/// Backward induction: `leaves` at the deepest level, then
/// `value(level, node) = op(level, node, up, down)` up to the root.
pub fn backward<C, F>(carrier: &C, leaves: Vec<f64>, op: F) -> Result<NodeValues>
where
    C: Carrier + ?Sized,
    F: Fn(usize, usize, f64, f64) -> Result<f64> + Sync,
{
    let depth = carrier.depth();
    if leaves.len() != carrier.width(depth) {
        return Err(invalid(format!(
            "expected {} leaf values, got {}",
            carrier.width(depth),
            leaves.len()
        )));
    }
    let mut levels = vec![Vec::new(); depth + 1];
    levels[depth] = leaves;
    for level in (0..depth).rev() {
        let next = &levels[level + 1];
        let eval = |node: usize| {
            let (u, d) = carrier.children(level, node);
            let v = op(level, node, next[u], next[d])?;
            if v.is_nan() {
                return Err(Error::NonFinite { level, node });
            }
            Ok(v)
        };
        let width = carrier.width(level);
        let row: Result<Vec<f64>> = if width >= PAR_WIDTH {
            (0..width).into_par_iter().map(eval).collect()
        } else {
            (0..width).map(eval).collect()
        };
        levels[level] = row?;
    }
    Ok(NodeValues { levels })
}

/// Non-recombining binomial tree of `+-sqrt(h)` increments rooted at a path prefix.
///
/// Node `id` at level `l` is a bit string of length `l`: bit `l-1-j` is the
/// move at step `j` (1 = up). Children of `id` are `2 id + 1` (up) and
/// `2 id` (down).
#[derive(Debug, Clone)]
pub struct ScenarioTree {
    step: f64,
    sqrt_step: f64,
    start: DiscretePath,
    depth: usize,
}

impl ScenarioTree {
    /// Full tree over `grid`, rooted at the origin.
    pub fn new(grid: &TimeGrid) -> Result<Self> {
        Self::with_cap(grid, DEFAULT_DEPTH_CAP)
    }

    pub fn with_cap(grid: &TimeGrid, cap: usize) -> Result<Self> {
        Self::rooted(DiscretePath::origin(grid.step(), 1), grid.steps(), cap)
    }

    /// Suffix tree of the given depth below `pt`.
    pub fn suffix(pt: &PathPoint, depth: usize) -> Result<Self> {
        Self::rooted(pt.path().clone(), depth, DEFAULT_DEPTH_CAP)
    }

    pub fn rooted(start: DiscretePath, depth: usize, cap: usize) -> Result<Self> {
        if start.dim() != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                actual: start.dim(),
            });
        }
        if depth > cap {
            return Err(Error::DepthExceeded { depth, cap });
        }
        let step = start.step();
        Ok(Self {
            step,
            sqrt_step: step.sqrt(),
            start,
            depth,
        })
    }

    pub fn start(&self) -> &DiscretePath {
        &self.start
    }

    /// Net number of up moves minus down moves to reach the node.
    pub fn displacement(level: usize, id: usize) -> i64 {
        2 * id.count_ones() as i64 - level as i64
    }

    /// Move at step `j < level` on the way to `id` (+1 up, -1 down).
    pub fn move_at(level: usize, id: usize, j: usize) -> i64 {
        if (id >> (level - 1 - j)) & 1 == 1 {
            1
        } else {
            -1
        }
    }

    /// Ancestor of `id` at `ancestor_level <= level`.
    pub fn ancestor(level: usize, id: usize, ancestor_level: usize) -> usize {
        id >> (level - ancestor_level)
    }

    fn x_start(&self) -> f64 {
        self.start.last()[0]
    }

    /// Path from the root node to `(level, id)`, re-based at 0.
    pub fn suffix_path(&self, level: usize, id: usize) -> DiscretePath {
        let vals: Vec<f64> = (0..=level)
            .map(|j| Self::displacement(j, id >> (level - j)) as f64 * self.sqrt_step)
            .collect();
        DiscretePath::from_rows_unchecked(self.step, 1, vals)
    }

    /// Finds the node whose prefix is `path` (up to 1e-9 relative tolerance).
    pub fn locate(&self, path: &DiscretePath) -> Option<(usize, usize)> {
        let s0 = self.start.steps();
        if path.dim() != 1 || path.steps() < s0 || path.steps() > s0 + self.depth {
            return None;
        }
        let tol = 1e-9 * (1.0 + self.x_start().abs()) * self.sqrt_step.max(1.0);
        for i in 0..=s0 {
            if (path.at(i, 0) - self.start.at(i, 0)).abs() > tol {
                return None;
            }
        }
        let level = path.steps() - s0;
        let mut id = 0usize;
        for j in 1..=level {
            let dx = (path.at(s0 + j, 0) - path.at(s0 + j - 1, 0)) / self.sqrt_step;
            id <<= 1;
            if (dx - 1.0).abs() < 1e-6 {
                id |= 1;
            } else if (dx + 1.0).abs() >= 1e-6 {
                return None;
            }
        }
        Some((level, id))
    }

    /// Evaluates `f` on the prefix of every node.
    pub fn process_values<F>(&self, f: F) -> Result<NodeValues>
    where
        F: Fn(&DiscretePath) -> Result<f64> + Sync,
    {
        let levels = (0..=self.depth)
            .map(|l| self.level_values(l, &f))
            .collect::<Result<Vec<_>>>()?;
        Ok(NodeValues { levels })
    }

    /// `xi` evaluated on every prefix: the adapted process `xi(omega_{. ^ t})`.
    pub fn functional_values(&self, xi: &PathFunctional) -> Result<NodeValues> {
        self.process_values(|p| xi.eval(p))
    }

    pub fn leaf_values(&self, xi: &PathFunctional) -> Result<Vec<f64>> {
        self.level_values(self.depth, &|p: &DiscretePath| xi.eval(p))
    }

    fn level_values<F>(&self, level: usize, f: &F) -> Result<Vec<f64>>
    where
        F: Fn(&DiscretePath) -> Result<f64> + Sync,
    {
        let width = 1usize << level;
        let eval = |id: usize| f(&self.prefix(level, id));
        if width >= PAR_WIDTH {
            (0..width).into_par_iter().map(eval).collect()
        } else {
            (0..width).map(eval).collect()
        }
    }
}

impl Carrier for ScenarioTree {
    fn step(&self) -> f64 {
        self.step
    }

    fn sqrt_step(&self) -> f64 {
        self.sqrt_step
    }

    fn depth(&self) -> usize {
        self.depth
    }

    fn start_index(&self) -> usize {
        self.start.steps()
    }

    fn width(&self, level: usize) -> usize {
        1usize << level
    }

    fn children(&self, _level: usize, node: usize) -> (usize, usize) {
        (2 * node + 1, 2 * node)
    }

    fn position(&self, level: usize, node: usize) -> f64 {
        self.x_start() + Self::displacement(level, node) as f64 * self.sqrt_step
    }

    fn prefix(&self, level: usize, node: usize) -> DiscretePath {
        let x0 = self.x_start();
        let mut vals = self.start.values().to_vec();
        vals.reserve(level);
        for j in 1..=level {
            vals.push(x0 + Self::displacement(j, node >> (level - j)) as f64 * self.sqrt_step);
        }
        DiscretePath::from_rows_unchecked(self.step, 1, vals)
    }
}
