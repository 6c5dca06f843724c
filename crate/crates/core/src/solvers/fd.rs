use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Markovian generators `g(Dv, D2v)` with unit diffusion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum MarkovGenerator {
    /// `1/2 D2v`.
    Heat,
    /// `1/2 D2v + sup_{|k| <= L} k Dv`.
    DriftHjb { bound: f64 },
}

impl MarkovGenerator {
    fn drift(&self) -> f64 {
        match self {
            Self::Heat => 0.0,
            Self::DriftHjb { bound } => *bound,
        }
    }
}

/// Space-time grid for the explicit scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FdGrid {
    /// Domain `[-a, a]`; `None` means `6 sqrt(T)`.
    pub half_width: Option<f64>,
    pub points: usize,
    /// `None` picks the fewest steps satisfying the CFL condition.
    pub time_steps: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdSolution {
    pub x: Vec<f64>,
    /// `v(0, x)`.
    pub v: Vec<f64>,
    pub time_steps: usize,
}

impl FdSolution {
    /// Linear interpolation of `v(0, .)`.
    pub fn value_at(&self, x: f64) -> Result<f64> {
        let (a, b) = (self.x[0], self.x[self.x.len() - 1]);
        if !(a..=b).contains(&x) {
            return Err(invalid(format!("{x} outside the grid [{a}, {b}]")));
        }
        let dx = self.x[1] - a;
        let k = (((x - a) / dx).floor() as usize).min(self.x.len() - 2);
        let w = (x - self.x[k]) / dx;
        Ok((1.0 - w) * self.v[k] + w * self.v[k + 1])
    }
}

/// Explicit finite differences for `-d_t v - g = 0`, `v(T) = psi`, with
/// upwinded drift and Dirichlet data `psi` at the boundary.
///
/// Stability needs `1 - h / dx^2 - h L / dx >= 0`.
pub fn markovian_fd(g: MarkovGenerator, psi: impl Fn(f64) -> f64, horizon: f64, grid: FdGrid) -> Result<FdSolution> {
    if grid.points < 3 {
        return Err(invalid("finite differences need at least 3 points"));
    }
    if !(horizon > 0.0) {
        return Err(invalid(format!("horizon must be positive, got {horizon}")));
    }
    let a = grid.half_width.unwrap_or(6.0 * horizon.sqrt());
    let dx = 2.0 * a / (grid.points - 1) as f64;
    let l = g.drift();
    let h_max = 1.0 / (1.0 / (dx * dx) + l / dx);
    let steps = match grid.time_steps {
        Some(m) => m,
        None => (horizon / h_max).ceil() as usize,
    };
    if steps == 0 {
        return Err(invalid("need at least one time step"));
    }
    let h = horizon / steps as f64;
    let cfl = 1.0 - h / (dx * dx) - h * l / dx;
    if cfl < -1e-12 {
        return Err(Error::Cfl(format!(
            "h = {h}, dx = {dx}, L = {l}: 1 - h/dx^2 - hL/dx = {cfl} < 0 (need at least {} steps)",
            (horizon / h_max).ceil()
        )));
    }
    let x: Vec<f64> = (0..grid.points).map(|i| -a + i as f64 * dx).collect();
    let mut v: Vec<f64> = x.iter().map(|xi| psi(*xi)).collect();
    let last = grid.points - 1;
    let mut next = v.clone();
    for _ in 0..steps {
        for i in 1..last {
            let d2 = (v[i + 1] - 2.0 * v[i] + v[i - 1]) / (dx * dx);
            let fwd = (v[i + 1] - v[i]) / dx;
            let bwd = (v[i] - v[i - 1]) / dx;
            let drift = (l * fwd).max(-l * bwd).max(0.0);
            next[i] = v[i] + h * (0.5 * d2 + drift);
        }
        next[0] = v[0];
        next[last] = v[last];
        std::mem::swap(&mut v, &mut next);
    }
    Ok(FdSolution {
        x,
        v,
        time_steps: steps,
    })
}
