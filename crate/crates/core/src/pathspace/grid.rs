use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Uniform time grid `t_i = i * h` on `[0, T]` with `h = T / n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(invalid(format!("horizon must be finite and > 0, got {horizon}")));
        }
        if steps == 0 {
            return Err(invalid("grid needs at least one step"));
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn step(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, index: usize) -> f64 {
        index as f64 * self.step()
    }

    /// Last grid index whose time does not exceed `t`.
    pub fn index_at_or_before(&self, t: f64) -> usize {
        grid_index(t, self.step()).min(self.steps)
    }
}

/// Largest `i` with `i * h <= t`, robust to one-ulp rounding of `t / h`.
pub(crate) fn grid_index(t: f64, h: f64) -> usize {
    if t <= 0.0 {
        return 0;
    }
    let r = t / h;
    let nearest = r.round();
    if (r - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest as usize
    } else {
        r.floor() as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_times_count_reproduces_horizon() {
        for n in [1usize, 3, 7, 10, 64, 1000] {
            for t in [0.3, 1.0, 2.5, 7.0] {
                let g = TimeGrid::new(t, n).unwrap();
                let back = g.step() * n as f64;
                assert!((back - t).abs() <= f64::EPSILON * t, "n={n} T={t}");
                for i in 0..n {
                    assert!(g.time(i + 1) > g.time(i));
                }
            }
        }
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(TimeGrid::new(0.0, 4).is_err());
        assert!(TimeGrid::new(1.0, 0).is_err());
        assert!(TimeGrid::new(f64::NAN, 4).is_err());
    }

    #[test]
    fn index_lookup() {
        let g = TimeGrid::new(1.0, 10).unwrap();
        assert_eq!(g.index_at_or_before(0.5), 5);
        assert_eq!(g.index_at_or_before(0.3), 3);
        assert_eq!(g.index_at_or_before(0.349), 3);
        assert_eq!(g.index_at_or_before(5.0), 10);
        let odd = TimeGrid::new(1.0, 7).unwrap();
        assert_eq!(odd.index_at_or_before(0.5), 3);
    }
}
