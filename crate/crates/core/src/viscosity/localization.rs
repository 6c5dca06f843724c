use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::measures::{Carrier, ScenarioTree};
use crate::stopping::StoppingTime;

/// `H = m ^ inf{k >= 1 : |omega'_k| >= eps}` on a suffix tree.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Localization {
    pub radius: f64,
    pub max_steps: usize,
}

impl Localization {
    pub fn new(radius: f64, max_steps: usize) -> Result<Self> {
        if !(radius > 0.0) || max_steps == 0 {
            return Err(invalid(format!(
                "localization needs radius > 0 and max_steps >= 1, got {radius} and {max_steps}"
            )));
        }
        Ok(Self { radius, max_steps })
    }

    /// `m = max(1, n/4)`, `eps = 4 sqrt(m h)`.
    pub fn default_for(steps: usize, step: f64) -> Self {
        let m = (steps / 4).max(1);
        Self {
            radius: 4.0 * (m as f64 * step).sqrt(),
            max_steps: m,
        }
    }

    /// Depth of the suffix tree needed with `remaining` steps left.
    pub fn depth(&self, remaining: usize) -> usize {
        self.max_steps.min(remaining)
    }

    /// Nodes of `tree` where the localized process exits (first hit only).
    pub fn exit_mask(&self, tree: &ScenarioTree) -> Vec<Vec<bool>> {
        let n = tree.depth();
        let x0 = tree.start().last()[0];
        let mut mask: Vec<Vec<bool>> = (0..=n).map(|l| vec![false; tree.width(l)]).collect();
        let mut alive: Vec<bool> = vec![true];
        for l in 1..=n {
            let w = tree.width(l);
            let mut next = vec![false; w];
            for id in 0..w {
                if !alive[id >> 1] {
                    continue;
                }
                let out = (tree.position(l, id) - x0).abs() >= self.radius || l == n;
                mask[l][id] = out;
                next[id] = !out;
            }
            alive = next;
        }
        mask
    }

    /// The exit as a stopping time on `tree`.
    pub fn exit_time(&self, tree: &ScenarioTree) -> Result<StoppingTime> {
        let mask = self.exit_mask(tree);
        StoppingTime::first_hit(tree.depth(), 1.min(tree.depth()), |l, id| mask[l][id])
    }

    /// `E_0[H]` in steps.
    pub fn expected_exit(&self, tree: &ScenarioTree) -> Result<f64> {
        let tau = self.exit_time(tree)?;
        let levels = tau.leaf_levels();
        Ok(levels.iter().sum::<usize>() as f64 / levels.len() as f64)
    }
}

/// Pathwise minimum of two exit times (the stability property `H1`).
pub fn min_exit(a: &StoppingTime, b: &StoppingTime) -> Result<StoppingTime> {
    if a.depth() != b.depth() {
        return Err(invalid("exit times on different trees"));
    }
    let levels = a
        .leaf_levels()
        .iter()
        .zip(b.leaf_levels())
        .map(|(x, y)| *x.min(y))
        .collect();
    StoppingTime::new(a.depth(), a.start().min(b.start()), levels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pathspace::{DiscretePath, TimeGrid};

    #[test]
    fn defaults() {
        let l = Localization::default_for(20, 0.05);
        assert_eq!(l.max_steps, 5);
        assert!((l.radius - 4.0 * 0.25f64.sqrt()).abs() < 1e-15);
        assert_eq!(Localization::default_for(2, 0.5).max_steps, 1);
        assert!(Localization::new(0.0, 3).is_err());
    }

    #[test]
    fn exits_are_positive_adapted_and_stable_under_min() {
        let g = TimeGrid::new(1.0, 16).unwrap();
        let s = g.step().sqrt();
        let start = DiscretePath::scalar(g.step(), &[0.0, s, 2.0 * s]).unwrap();
        let tree = ScenarioTree::rooted(start, 6, 22).unwrap();
        let wide = Localization::new(10.0, 6).unwrap();
        let narrow = Localization::new(2.0 * s, 6).unwrap();
        let a = wide.exit_time(&tree).unwrap();
        let b = narrow.exit_time(&tree).unwrap();
        assert!(a.leaf_levels().iter().all(|l| *l == 6));
        assert!(b.leaf_levels().iter().all(|l| *l >= 2 && *l <= 6));
        for t in [&a, &b] {
            assert!(t.is_adapted());
        }
        let m = min_exit(&a, &b).unwrap();
        assert!(m.is_adapted());
        assert_eq!(m, b);
        // Shrinking the ball can only bring the exit forward.
        let tighter = Localization::new(s, 6).unwrap().exit_time(&tree).unwrap();
        assert!(tighter.leaf_levels().iter().zip(b.leaf_levels()).all(|(x, y)| x <= y));
        assert!(tighter.leaf_levels().iter().all(|l| *l == 1));
        assert_eq!(Localization::new(s, 6).unwrap().expected_exit(&tree).unwrap(), 1.0);
    }
}
