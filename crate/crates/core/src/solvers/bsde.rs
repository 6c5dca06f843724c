use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::funcalc::Driver;
use crate::measures::NodeValues;
use crate::pathspace::{PathFunctional, PathPoint, TimeGrid};
use crate::solvers::backend::{prepare, remaining_steps, Backend};

/// Explicit backward Euler solution of `Y = xi + int F(Y, Z) ds - int Z dB`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BsdeSolution {
    pub y: NodeValues,
    /// `Z` at interior nodes.
    pub z: NodeValues,
    pub step: f64,
    pub backend: Backend,
    /// `(|xi|_inf + T sup|F(., 0, 0)|) e^{L_0 T}` when `sup|F(., 0, 0)|` is known.
    pub bound: Option<f64>,
    pub warnings: Vec<String>,
}

impl BsdeSolution {
    pub fn root(&self) -> f64 {
        self.y.root()
    }

    /// `max |Y| <= bound` (with relative slack `1e-12`); `None` when no bound applies.
    pub fn within_bound(&self) -> Option<bool> {
        self.bound.map(|b| self.y.max_abs() <= b * (1.0 + 1e-12))
    }
}

/// `Z = (Y_up - Y_down) / (2 sqrt h)`, `Y = E_0[Y'] + h F(t, omega, E_0[Y'], Z)`.
pub fn solve_bsde(
    driver: &Driver,
    xi: &PathFunctional,
    grid: &TimeGrid,
    pt: &PathPoint,
    backend: Backend,
) -> Result<BsdeSolution> {
    let h = grid.step();
    let depth = remaining_steps(grid, pt)?;
    let p = prepare(xi, pt.path(), depth, backend)?;
    let c = p.carrier.as_ref();
    let s = c.sqrt_step();
    let l0 = driver.lipschitz();

    let mut warnings = Vec::new();
    if l0 * h >= 1.0 {
        let msg = format!("L_0 h = {} >= 1: explicit scheme may be unstable", l0 * h);
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let horizon = depth as f64 * h;
    let xi_sup = p.leaves.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let bound = match driver {
        Driver::Affine { z_abs, .. } if z_abs.abs() * s > 1.0 => None,
        _ => driver.sup_at_zero().map(|f0| (xi_sup + horizon * f0) * (l0 * horizon).exp()),
    };

    let needs_path = matches!(driver, Driver::Custom { .. });
    let n = c.depth();
    let mut y = vec![Vec::new(); n + 1];
    let mut z = vec![Vec::new(); n];
    y[n] = p.leaves;
    for l in (0..n).rev() {
        let t = c.time(l);
        let w = c.width(l);
        let mut yl = Vec::with_capacity(w);
        let mut zl = Vec::with_capacity(w);
        for node in 0..w {
            let (u, d) = c.children(l, node);
            let (yu, yd) = (y[l + 1][u], y[l + 1][d]);
            let e = 0.5 * (yu + yd);
            let zv = (yu - yd) / (2.0 * s);
            let f = if needs_path {
                driver.eval(t, &c.prefix(l, node), e, &[zv])
            } else {
                driver.eval(t, pt.path(), e, &[zv])
            };
            let v = e + h * f;
            if !v.is_finite() {
                return Err(Error::NonFinite { level: l, node });
            }
            yl.push(v);
            zl.push(zv);
        }
        y[l] = yl;
        z[l] = zl;
    }
    Ok(BsdeSolution {
        y: NodeValues::from_levels(y),
        z: NodeValues::from_levels(z),
        step: h,
        backend: p.kind,
        bound,
        warnings,
    })
}
