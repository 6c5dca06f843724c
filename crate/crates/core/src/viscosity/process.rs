use std::fmt;
use std::sync::Arc;

use crate::error::Result;
use crate::funcalc::AdaptedProcess;
use crate::pathspace::{DiscretePath, PathFunctional, PathPoint, TimeGrid};
use crate::solvers::{solve_heat, Backend, HeatMethod};

/// `u(t, omega) = E^{P_0}[xi^{t, omega}]`, solved afresh at each prefix.
#[derive(Debug, Clone)]
pub struct HeatSolution {
    pub xi: PathFunctional,
    pub grid: TimeGrid,
}

impl HeatSolution {
    pub fn new(xi: PathFunctional, grid: TimeGrid) -> Self {
        Self { xi, grid }
    }
}

impl AdaptedProcess for HeatSolution {
    fn value(&self, prefix: &DiscretePath) -> Result<f64> {
        let v = solve_heat(
            &self.xi,
            &self.grid,
            &PathPoint::new(prefix.clone()),
            HeatMethod::Exact {
                backend: Backend::Auto,
            },
        )?;
        Ok(v.value)
    }
}

/// `u_t + delta t`.
#[derive(Clone)]
pub struct TimeSlope {
    pub inner: Arc<dyn AdaptedProcess>,
    pub delta: f64,
}

impl TimeSlope {
    pub fn new(inner: Arc<dyn AdaptedProcess>, delta: f64) -> Self {
        Self { inner, delta }
    }
}

impl fmt::Debug for TimeSlope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TimeSlope({})", self.delta)
    }
}

impl AdaptedProcess for TimeSlope {
    fn value(&self, prefix: &DiscretePath) -> Result<f64> {
        Ok(self.inner.value(prefix)? + self.delta * prefix.end_time())
    }
}

/// `u + v`.
#[derive(Clone)]
pub struct ProcessSum(pub Arc<dyn AdaptedProcess>, pub Arc<dyn AdaptedProcess>);

impl AdaptedProcess for ProcessSum {
    fn value(&self, prefix: &DiscretePath) -> Result<f64> {
        Ok(self.0.value(prefix)? + self.1.value(prefix)?)
    }
}
