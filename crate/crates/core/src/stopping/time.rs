use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::measures::{Carrier, DriftControl, NodeValues, ScenarioTree};

/// A stopping time on a scenario tree, stored as one level per leaf.
///
/// Levels are relative to the tree root. `start` is the earliest admissible
/// level (the `t` of `T^t`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoppingTime {
    depth: usize,
    start: usize,
    levels: Vec<usize>,
}

impl StoppingTime {
    pub fn new(depth: usize, start: usize, levels: Vec<usize>) -> Result<Self> {
        if levels.len() != 1usize << depth {
            return Err(invalid(format!(
                "stopping time on depth {depth} needs {} leaf levels, got {}",
                1usize << depth,
                levels.len()
            )));
        }
        if start > depth {
            return Err(invalid(format!("start level {start} beyond depth {depth}")));
        }
        if let Some(bad) = levels.iter().find(|l| **l < start || **l > depth) {
            return Err(invalid(format!("stopping level {bad} outside [{start}, {depth}]")));
        }
        Ok(Self {
            depth,
            start,
            levels,
        })
    }

    pub fn constant(depth: usize, level: usize) -> Result<Self> {
        Self::new(depth, 0, vec![level; 1usize << depth])
    }

    /// The first level `>= start` on each path where `stop(level, node)` holds,
    /// or the leaf.
    pub fn first_hit(
        depth: usize,
        start: usize,
        stop: impl Fn(usize, usize) -> bool,
    ) -> Result<Self> {
        let levels = (0..1usize << depth)
            .map(|leaf| {
                (start..depth)
                    .find(|&l| stop(l, ScenarioTree::ancestor(depth, leaf, l)))
                    .unwrap_or(depth)
            })
            .collect();
        Self::new(depth, start, levels)
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn leaf_levels(&self) -> &[usize] {
        &self.levels
    }

    /// `(level, node)` where the path ending at `leaf` stops.
    pub fn stop_node(&self, leaf: usize) -> (usize, usize) {
        let l = self.levels[leaf];
        (l, ScenarioTree::ancestor(self.depth, leaf, l))
    }

    /// Min and max stopping level over the leaves below each node.
    fn subtree_range(&self) -> Vec<Vec<(usize, usize)>> {
        let mut out = vec![Vec::new(); self.depth + 1];
        out[self.depth] = self.levels.iter().map(|l| (*l, *l)).collect();
        for l in (0..self.depth).rev() {
            out[l] = (0..1usize << l)
                .map(|id| {
                    let (a, b) = (out[l + 1][2 * id + 1], out[l + 1][2 * id]);
                    (a.0.min(b.0), a.1.max(b.1))
                })
                .collect();
        }
        out
    }

    /// `{tau <= l}` is decided at every level-`l` node: either every path
    /// through the node has stopped by `l` or none has.
    pub fn is_adapted(&self) -> bool {
        let range = self.subtree_range();
        (0..=self.depth).all(|l| range[l].iter().all(|&(lo, hi)| hi <= l || lo > l))
    }

    /// Boolean per node: the path through the node stops exactly there.
    pub fn stop_mask(&self) -> Vec<Vec<bool>> {
        let range = self.subtree_range();
        let mut mask: Vec<Vec<bool>> = (0..=self.depth).map(|l| vec![false; 1usize << l]).collect();
        for (l, row) in mask.iter_mut().enumerate() {
            for (id, m) in row.iter_mut().enumerate() {
                let (lo, hi) = range[l][id];
                let parent_continues = l == 0 || range[l - 1][id >> 1].0 > l - 1;
                *m = lo == l && hi == l && parent_continues;
            }
        }
        mask
    }
}

/// `E^{P_lambda}[X_tau | node]` at every node of levels `<= tau`.
///
/// Nodes below the stopping node carry the stopped value as well.
pub fn stopped_expectation(
    tree: &ScenarioTree,
    obstacle: &NodeValues,
    tau: &StoppingTime,
    control: &DriftControl,
) -> Result<NodeValues> {
    if tau.depth() != tree.depth() {
        return Err(invalid("stopping time and tree depths differ"));
    }
    control.bound().check(tree.step())?;
    let s = tree.sqrt_step();
    let range = tau.subtree_range();
    let mut levels = vec![Vec::new(); tree.depth() + 1];
    levels[tree.depth()] = obstacle.level(tree.depth()).to_vec();
    for l in (0..tree.depth()).rev() {
        let next = &levels[l + 1];
        levels[l] = (0..1usize << l)
            .map(|id| {
                if range[l][id].0 <= l {
                    obstacle.get(l, id)
                } else {
                    let pu = 0.5 * (1.0 + control.get(l, id) * s);
                    pu * next[2 * id + 1] + (1.0 - pu) * next[2 * id]
                }
            })
            .collect();
    }
    Ok(NodeValues::from_levels(levels))
}

/// Every adapted stopping time on a tree of `depth` (with `start = 0`).
///
/// The count satisfies `c(n) = 1 + c(n-1)^2`: 1, 2, 5, 26, 677, 458330.
pub fn enumerate_stopping_times(depth: usize) -> Result<Vec<StoppingTime>> {
    if depth > 5 {
        return Err(invalid(format!("enumeration of stopping times on depth {depth} is too large")));
    }
    // Subtree patterns as leaf-level vectors relative to the subtree root.
    fn patterns(height: usize) -> Vec<Vec<usize>> {
        let mut out = vec![vec![0; 1usize << height]];
        if height == 0 {
            return out;
        }
        let sub = patterns(height - 1);
        for up in &sub {
            for down in &sub {
                // Leaf ids put the down subtree first (even), then up.
                let mut v: Vec<usize> = down.iter().map(|l| l + 1).collect();
                v.extend(up.iter().map(|l| l + 1));
                out.push(v);
            }
        }
        out
    }
    patterns(depth)
        .into_iter()
        .map(|levels| StoppingTime::new(depth, 0, levels))
        .collect()
}
