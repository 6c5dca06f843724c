use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::measures::{Carrier, Lattice, ScenarioTree, DEFAULT_DEPTH_CAP, DEFAULT_LATTICE_BUDGET};
use crate::pathspace::{DiscretePath, PathFunctional, PathPoint, TimeGrid};

/// Where a backward recursion runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    /// Non-recombining tree (exact for any functional, depth-capped).
    Tree,
    /// Recombining lattice over running summaries.
    Lattice,
    /// Lattice when the functional recombines, tree otherwise.
    #[default]
    Auto,
}

/// A carrier below a point together with `xi` on its leaves.
pub struct Prepared {
    pub carrier: Box<dyn Carrier>,
    pub leaves: Vec<f64>,
    pub kind: Backend,
}

/// Remaining steps from `pt` to the end of `grid`.
pub fn remaining_steps(grid: &TimeGrid, pt: &PathPoint) -> Result<usize> {
    if !pt.path().same_step(grid.step()) {
        return Err(invalid(format!(
            "point step {} differs from grid step {}",
            pt.path().step(),
            grid.step()
        )));
    }
    if pt.index() > grid.steps() {
        return Err(invalid(format!(
            "point index {} beyond grid of {} steps",
            pt.index(),
            grid.steps()
        )));
    }
    Ok(grid.steps() - pt.index())
}

pub fn prepare(xi: &PathFunctional, start: &DiscretePath, depth: usize, backend: Backend) -> Result<Prepared> {
    let lattice = |required: bool| -> Result<Option<Prepared>> {
        match Lattice::build(xi, start, depth, DEFAULT_LATTICE_BUDGET)? {
            Some(l) => {
                let leaves = l.leaf_values().to_vec();
                Ok(Some(Prepared {
                    carrier: Box::new(l),
                    leaves,
                    kind: Backend::Lattice,
                }))
            }
            None if required => Err(invalid(format!("{xi:?} has no lattice representation"))),
            None => Ok(None),
        }
    };
    let tree = || -> Result<Prepared> {
        let t = ScenarioTree::rooted(start.clone(), depth, DEFAULT_DEPTH_CAP)?;
        let leaves = t.leaf_values(xi)?;
        Ok(Prepared {
            carrier: Box::new(t),
            leaves,
            kind: Backend::Tree,
        })
    };
    match backend {
        Backend::Tree => tree(),
        Backend::Lattice => Ok(lattice(true)?.expect("required lattice")),
        Backend::Auto => match lattice(false)? {
            Some(p) => Ok(p),
            None => tree(),
        },
    }
}
