use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::pathspace::{DiscretePath, PathFunctional, TimeGrid};

/// `Z = exp(sum_i lambda_i . dB_i - 1/2 sum_i |lambda_i|^2 h)`.
///
/// `lambdas` holds one `d`-vector per step, row-major (`steps * d` values).
pub fn girsanov_weight(path: &DiscretePath, lambdas: &[f64]) -> Result<f64> {
    let d = path.dim();
    let n = path.steps();
    if lambdas.len() != n * d {
        return Err(invalid(format!(
            "need {} drift values for {n} steps in dimension {d}, got {}",
            n * d,
            lambdas.len()
        )));
    }
    let h = path.step();
    let mut exponent = 0.0;
    for i in 0..n {
        for c in 0..d {
            let l = lambdas[i * d + c];
            exponent += l * (path.at(i + 1, c) - path.at(i, c)) - 0.5 * l * l * h;
        }
    }
    Ok(exponent.exp())
}

type DriftFn = dyn Fn(f64, &DiscretePath) -> Vec<f64> + Send + Sync;

/// Drift used to reweight `P_0` samples into `P_lambda`.
#[derive(Clone)]
pub enum DriftRule {
    Constant(Vec<f64>),
    /// `lambda(t_i, omega_{. ^ t_i})`, evaluated on the prefix before each step.
    Adapted(Arc<DriftFn>),
}

impl DriftRule {
    pub fn zero(dim: usize) -> Self {
        Self::Constant(vec![0.0; dim])
    }

    pub fn adapted(f: impl Fn(f64, &DiscretePath) -> Vec<f64> + Send + Sync + 'static) -> Self {
        Self::Adapted(Arc::new(f))
    }
}

impl std::fmt::Debug for DriftRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Constant(v) => f.debug_tuple("Constant").field(v).finish(),
            Self::Adapted(_) => f.write_str("Adapted(..)"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_paths: usize,
}

impl McEstimate {
    /// `|mean - target| <= k * std_error`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.std_error
    }
}

/// Gaussian-increment path under `P_0` for sample `index` of stream `seed`.
pub fn sample_path(grid: &TimeGrid, dim: usize, seed: u64, index: u64) -> DiscretePath {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let sd = grid.step().sqrt();
    let mut vals = vec![0.0; dim];
    for i in 0..grid.steps() {
        for c in 0..dim {
            let z: f64 = StandardNormal.sample(&mut rng);
            let prev = vals[i * dim + c];
            vals.push(prev + sd * z);
        }
    }
    DiscretePath::from_rows_unchecked(grid.step(), dim, vals)
}

fn drift_along(path: &DiscretePath, grid: &TimeGrid, rule: &DriftRule) -> Result<Vec<f64>> {
    let d = path.dim();
    match rule {
        DriftRule::Constant(v) => {
            if v.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: v.len(),
                });
            }
            Ok(v.iter().copied().cycle().take(d * grid.steps()).collect())
        }
        DriftRule::Adapted(f) => {
            let mut out = Vec::with_capacity(d * grid.steps());
            for i in 0..grid.steps() {
                let l = f(grid.time(i), &path.prefix(i));
                if l.len() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        actual: l.len(),
                    });
                }
                out.extend(l);
            }
            Ok(out)
        }
    }
}

/// `E^{P_lambda}[xi]` as the `Z^lambda`-weighted mean over `P_0` paths.
///
/// Each path draws from its own ChaCha stream (`seed`, path index), and the
/// reduction runs in index order, so results do not depend on thread count.
pub fn expectation_mc(
    xi: &PathFunctional,
    grid: &TimeGrid,
    dim: usize,
    drift: &DriftRule,
    n_paths: usize,
    seed: u64,
) -> Result<McEstimate> {
    if n_paths < 2 {
        return Err(invalid("need at least two paths"));
    }
    let samples: Vec<f64> = (0..n_paths)
        .into_par_iter()
        .map(|k| {
            let path = sample_path(grid, dim, seed, k as u64);
            let z = girsanov_weight(&path, &drift_along(&path, grid, drift)?)?;
            Ok(xi.eval(&path)? * z)
        })
        .collect::<Result<_>>()?;
    let n = n_paths as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    Ok(McEstimate {
        mean,
        std_error: (var / n).sqrt(),
        n_paths,
    })
}
