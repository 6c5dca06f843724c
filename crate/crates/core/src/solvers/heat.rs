use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::measures::{backward, expectation_mc, DriftRule, NodeValues};
use crate::pathspace::{PathFunctional, PathPoint, TimeGrid};
use crate::solvers::backend::{prepare, remaining_steps, Backend};

/// Heat-equation value `u(t, omega) = E^{P_0}[xi^{t, omega}]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatValue {
    pub value: f64,
    /// Monte Carlo standard error; `None` for exact backends.
    pub std_error: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum HeatMethod {
    Exact { backend: Backend },
    MonteCarlo { paths: usize, seed: u64 },
}

pub fn solve_heat(
    xi: &PathFunctional,
    grid: &TimeGrid,
    pt: &PathPoint,
    method: HeatMethod,
) -> Result<HeatValue> {
    let depth = remaining_steps(grid, pt)?;
    match method {
        HeatMethod::Exact { backend } => {
            let p = prepare(xi, pt.path(), depth, backend)?;
            let v = backward(p.carrier.as_ref(), p.leaves, |_, _, u, d| Ok(0.5 * (u + d)))?;
            Ok(HeatValue {
                value: v.root(),
                std_error: None,
            })
        }
        HeatMethod::MonteCarlo { paths, seed } => {
            if depth == 0 {
                return Ok(HeatValue {
                    value: xi.eval(pt.path())?,
                    std_error: Some(0.0),
                });
            }
            let shifted = xi.shift(pt)?;
            let suffix = TimeGrid::new(depth as f64 * grid.step(), depth)?;
            let est = expectation_mc(&shifted, &suffix, pt.path().dim(), &DriftRule::zero(pt.path().dim()), paths, seed)?;
            Ok(HeatValue {
                value: est.mean,
                std_error: Some(est.std_error),
            })
        }
    }
}

/// Heat values at every node of the carrier below `pt`.
pub fn heat_nodes(
    xi: &PathFunctional,
    grid: &TimeGrid,
    pt: &PathPoint,
    backend: Backend,
) -> Result<NodeValues> {
    let depth = remaining_steps(grid, pt)?;
    let p = prepare(xi, pt.path(), depth, backend)?;
    backward(p.carrier.as_ref(), p.leaves, |_, _, u, d| Ok(0.5 * (u + d)))
}
