use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::measures::tree::Carrier;
use crate::pathspace::{DiscretePath, PathFunctional};

/// Default node budget for a stored lattice.
pub const DEFAULT_LATTICE_BUDGET: usize = 8_000_000;

struct Level {
    disp: Vec<i64>,
    parent: Vec<u32>,
    children: Vec<(u32, u32)>,
}

/// Recombining binomial lattice for a functional with running summaries.
///
/// Nodes are the distinct `(displacement, summaries)` states reachable in
/// `l` steps; two tree nodes with the same state have identical futures, so
/// any backward recursion whose one-step rule depends on the node only
/// through its time and position gives the same values on the lattice as on
/// the non-recombining tree.
pub struct Lattice {
    step: f64,
    sqrt_step: f64,
    start: DiscretePath,
    levels: Vec<Level>,
    leaves: Vec<f64>,
}

impl Lattice {
    /// Builds the lattice of `xi` below `start` with `depth` further steps.
    ///
    /// Returns `Ok(None)` when `xi` has no lattice representation.
    pub fn build(
        xi: &PathFunctional,
        start: &DiscretePath,
        depth: usize,
        budget: usize,
    ) -> Result<Option<Lattice>> {
        if start.dim() != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                actual: start.dim(),
            });
        }
        let (base, full_prefix) = xi.unshift(start)?;
        let Some(nslots) = base.lattice_slots() else {
            return Ok(None);
        };
        // A shifted functional sees `prefix_end + x` where the carrier sees `x`.
        let offset = match xi {
            PathFunctional::Shifted { prefix, .. } => Some(prefix.last()[0]),
            _ => None,
        };
        let lift = |x: f64| match offset {
            Some(o) => o + x,
            None => x,
        };

        let step = start.step();
        let sqrt_step = step.sqrt();
        let x_start = start.last()[0];
        let base_start = full_prefix.steps();

        let mut slots = vec![0.0; nslots];
        base.lattice_init(&mut slots);
        for i in 0..=base_start {
            base.lattice_update(&mut slots, i, full_prefix.at(i, 0), step);
        }

        let mut levels = vec![Level {
            disp: vec![0],
            parent: vec![0],
            children: Vec::new(),
        }];
        let mut cur_slots = slots;
        let mut total = 1usize;
        for l in 0..depth {
            let width = levels[l].disp.len();
            let mut index: BTreeMap<(i64, Vec<u64>), u32> = BTreeMap::new();
            let mut next = Level {
                disp: Vec::new(),
                parent: Vec::new(),
                children: Vec::new(),
            };
            let mut next_slots = Vec::new();
            let mut children = Vec::with_capacity(width);
            for node in 0..width {
                let d0 = levels[l].disp[node];
                let mut pair = [0u32; 2];
                for (k, mv) in [1i64, -1].into_iter().enumerate() {
                    let d = d0 + mv;
                    let x = x_start + d as f64 * sqrt_step;
                    let mut s = cur_slots[node * nslots..(node + 1) * nslots].to_vec();
                    base.lattice_update(&mut s, base_start + l + 1, lift(x), step);
                    let key = (d, s.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
                    let id = *index.entry(key).or_insert_with(|| {
                        next.disp.push(d);
                        next.parent.push(node as u32);
                        next_slots.extend_from_slice(&s);
                        (next.disp.len() - 1) as u32
                    });
                    pair[k] = id;
                }
                children.push((pair[0], pair[1]));
            }
            levels[l].children = children;
            total += next.disp.len();
            if total > budget {
                return Err(Error::Unsupported(format!(
                    "lattice for depth {depth} exceeds node budget {budget}"
                )));
            }
            levels.push(next);
            cur_slots = next_slots;
        }
        let last = &levels[depth];
        let leaves = (0..last.disp.len())
            .map(|i| {
                let x = x_start + last.disp[i] as f64 * sqrt_step;
                base.lattice_value(&cur_slots[i * nslots..(i + 1) * nslots], lift(x))
            })
            .collect();
        Ok(Some(Lattice {
            step,
            sqrt_step,
            start: start.clone(),
            levels,
            leaves,
        }))
    }

    /// `xi` at every leaf state.
    pub fn leaf_values(&self) -> &[f64] {
        &self.leaves
    }

    pub fn node_count(&self) -> usize {
        self.levels.iter().map(|l| l.disp.len()).sum()
    }
}

impl Carrier for Lattice {
    fn step(&self) -> f64 {
        self.step
    }

    fn sqrt_step(&self) -> f64 {
        self.sqrt_step
    }

    fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    fn start_index(&self) -> usize {
        self.start.steps()
    }

    fn width(&self, level: usize) -> usize {
        self.levels[level].disp.len()
    }

    fn children(&self, level: usize, node: usize) -> (usize, usize) {
        let (u, d) = self.levels[level].children[node];
        (u as usize, d as usize)
    }

    fn position(&self, level: usize, node: usize) -> f64 {
        self.start.last()[0] + self.levels[level].disp[node] as f64 * self.sqrt_step
    }

    fn prefix(&self, level: usize, node: usize) -> DiscretePath {
        let mut disp = vec![0i64; level + 1];
        let mut n = node;
        for l in (0..=level).rev() {
            disp[l] = self.levels[l].disp[n];
            n = self.levels[l].parent[n] as usize;
        }
        let x0 = self.start.last()[0];
        let mut vals = self.start.values().to_vec();
        vals.extend(disp[1..].iter().map(|d| x0 + *d as f64 * self.sqrt_step));
        DiscretePath::from_rows_unchecked(self.step, 1, vals)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::tree::{backward, ScenarioTree};
    use crate::pathspace::{PathPoint, TimeGrid};

    fn heat_root<C: Carrier>(c: &C, leaves: Vec<f64>) -> f64 {
        backward(c, leaves, |_, _, u, d| Ok(0.5 * (u + d))).unwrap().root()
    }

    #[test]
    fn lattice_matches_tree_expectations() {
        let g = TimeGrid::new(1.0, 12).unwrap();
        let tree = ScenarioTree::new(&g).unwrap();
        let origin = DiscretePath::origin(g.step(), 1);
        let fns = [
            PathFunctional::terminal(),
            PathFunctional::running_max(),
            PathFunctional::fixed_time(0.5).powi(2),
            PathFunctional::terminal().scaled(-1.0).plus_constant(0.2).positive_part(),
            PathFunctional::Affine {
                constant: 0.0,
                terms: vec![
                    (1.0, PathFunctional::running_max()),
                    (1.0, PathFunctional::running_min()),
                ],
            },
        ];
        for xi in &fns {
            let lat = Lattice::build(xi, &origin, 12, DEFAULT_LATTICE_BUDGET).unwrap().unwrap();
            assert!(lat.node_count() < (1 << 13));
            let a = heat_root(&lat, lat.leaf_values().to_vec());
            let b = heat_root(&tree, tree.leaf_values(xi).unwrap());
            assert!((a - b).abs() < 1e-13, "{xi:?}: {a} vs {b}");
        }
    }

    #[test]
    fn shifted_functional_on_lattice() {
        let g = TimeGrid::new(1.0, 10).unwrap();
        let full = DiscretePath::scalar(g.step(), &{
            let s = g.step().sqrt();
            vec![0.0, s, 2.0 * s, s]
        })
        .unwrap();
        let xi = PathFunctional::running_max();
        let pt = PathPoint::new(full.prefix(2));
        let shifted = xi.shift(&pt).unwrap();
        let rest = PathPoint::new(full.suffix_from(2));
        // Solve at the point (1 more step already taken) with 5 remaining steps.
        let lat = Lattice::build(&shifted, rest.path(), 5, 1000).unwrap().unwrap();
        let tree = ScenarioTree::rooted(rest.path().clone(), 5, 22).unwrap();
        let a = heat_root(&lat, lat.leaf_values().to_vec());
        let b = heat_root(&tree, tree.leaf_values(&shifted).unwrap());
        assert!((a - b).abs() < 1e-13);
    }

    #[test]
    fn unsupported_and_budget() {
        let origin = DiscretePath::origin(0.1, 1);
        assert!(Lattice::build(&PathFunctional::time_average(), &origin, 5, 100)
            .unwrap()
            .is_none());
        assert!(matches!(
            Lattice::build(&PathFunctional::running_max(), &origin, 200, 1000),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn representative_prefix_reaches_node() {
        let origin = DiscretePath::origin(0.25, 1);
        let lat = Lattice::build(&PathFunctional::running_max(), &origin, 6, 10_000)
            .unwrap()
            .unwrap();
        for l in 0..=6 {
            for n in 0..lat.width(l) {
                let p = lat.prefix(l, n);
                assert_eq!(p.steps(), l);
                assert_eq!(p.last()[0], lat.position(l, n));
            }
        }
        let leaf_max: Vec<f64> = (0..lat.width(6))
            .map(|n| PathFunctional::running_max().eval(&lat.prefix(6, n)).unwrap())
            .collect();
        assert_eq!(leaf_max, lat.leaf_values());
    }
}
