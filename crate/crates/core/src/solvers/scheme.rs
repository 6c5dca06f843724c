use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::funcalc::{Driver, Generator, Paraboloid};
use crate::measures::{backward, ebar_step, DriftBound, NodeValues};
use crate::pathspace::{DiscretePath, PathFunctional, PathPoint, TimeGrid};
use crate::solvers::backend::{prepare, remaining_steps, Backend};

/// Where a one-step operator is applied.
pub struct StepPoint<'a> {
    pub t: f64,
    pub x: f64,
    pub h: f64,
    /// Prefix to the node, built only for operators that ask for it.
    pub path: Option<&'a DiscretePath>,
}

type CustomStep = dyn Fn(&StepPoint<'_>, f64, f64) -> f64 + Send + Sync;

/// One-step operator `T_h` acting on the two child values of a node.
#[derive(Clone)]
pub enum SchemeOperator {
    /// Equal-weight child average.
    Heat,
    /// `E_0[phi] + h F(t, omega, E_0[phi], E_0[phi dB] / h)`.
    Semilinear(Driver),
    /// One step of the upper expectation with bound `L`.
    DriftHjb(DriftBound),
    Custom {
        name: String,
        needs_path: bool,
        f: Arc<CustomStep>,
    },
}

impl SchemeOperator {
    pub fn custom(
        name: impl Into<String>,
        needs_path: bool,
        f: impl Fn(&StepPoint<'_>, f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self::Custom {
            name: name.into(),
            needs_path,
            f: Arc::new(f),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Self::Heat => "heat".into(),
            Self::Semilinear(f) => format!("semilinear {f:?}"),
            Self::DriftHjb(b) => format!("drift-hjb L={}", b.value()),
            Self::Custom { name, .. } => name.clone(),
        }
    }

    /// The generator the operator is meant to be consistent with.
    pub fn generator(&self) -> Option<Generator> {
        match self {
            Self::Heat => Some(Generator::Heat),
            Self::Semilinear(f) => Some(Generator::Semilinear(f.clone())),
            Self::DriftHjb(b) => Some(Generator::DriftHjb { bound: b.value() }),
            Self::Custom { .. } => None,
        }
    }

    fn needs_path(&self) -> bool {
        match self {
            Self::Semilinear(Driver::Custom { .. }) => true,
            Self::Custom { needs_path, .. } => *needs_path,
            _ => false,
        }
    }

    /// Checks the operator can run with step `h`.
    pub fn validate(&self, h: f64) -> Result<()> {
        match self {
            Self::DriftHjb(b) => b.check(h),
            _ => Ok(()),
        }
    }

    pub fn apply(&self, at: &StepPoint<'_>, up: f64, down: f64) -> f64 {
        let s = at.h.sqrt();
        match self {
            Self::Heat => 0.5 * (up + down),
            Self::Semilinear(f) => {
                let e = 0.5 * (up + down);
                let z = (up - down) / (2.0 * s);
                let path = match at.path {
                    Some(p) => std::borrow::Cow::Borrowed(p),
                    None => std::borrow::Cow::Owned(DiscretePath::origin(at.h, 1)),
                };
                e + at.h * f.eval(at.t, &path, e, &[z])
            }
            Self::DriftHjb(b) => ebar_step(up, down, b.value(), s).0,
            Self::Custom { f, .. } => f(at, up, down),
        }
    }
}

impl fmt::Debug for SchemeOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// JSON-facing scheme operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OperatorSpec {
    Heat,
    Semilinear {
        #[serde(default)]
        y_coef: f64,
        #[serde(default)]
        z_abs: f64,
        #[serde(default)]
        constant: f64,
    },
    DriftHjb { bound: f64 },
}

impl OperatorSpec {
    pub fn build(&self) -> Result<SchemeOperator> {
        Ok(match self {
            Self::Heat => SchemeOperator::Heat,
            Self::Semilinear {
                y_coef,
                z_abs,
                constant,
            } => SchemeOperator::Semilinear(Driver::affine(*y_coef, *z_abs, *constant)),
            Self::DriftHjb { bound } => SchemeOperator::DriftHjb(DriftBound::new(*bound)?),
        })
    }
}

/// Node values of the scheme `u^h(t_i) = T_h[u^h(t_{i+1})]`, `u^h(t_n) = xi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeSolution {
    pub values: NodeValues,
    pub step: f64,
    pub operator: String,
    pub backend: Backend,
}

impl SchemeSolution {
    pub fn root(&self) -> f64 {
        self.values.root()
    }
}

pub fn monotone_scheme(
    op: &SchemeOperator,
    xi: &PathFunctional,
    grid: &TimeGrid,
    pt: &PathPoint,
    backend: Backend,
) -> Result<SchemeSolution> {
    let h = grid.step();
    op.validate(h)?;
    let depth = remaining_steps(grid, pt)?;
    let p = prepare(xi, pt.path(), depth, backend)?;
    let c = p.carrier.as_ref();
    let values = backward(c, p.leaves, |l, n, u, d| {
        let prefix = op.needs_path().then(|| c.prefix(l, n));
        let at = StepPoint {
            t: c.time(l),
            x: c.position(l, n),
            h,
            path: prefix.as_ref(),
        };
        let v = op.apply(&at, u, d);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::OperatorFailure {
                level: l,
                node: n,
                reason: format!("{} returned {v}", op.name()),
            })
        }
    })?;
    Ok(SchemeSolution {
        values,
        step: h,
        operator: op.name(),
        backend: p.kind,
    })
}

/// Pairs `phi <= psi` that the operator failed to order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub trials: usize,
    pub violations: usize,
    pub worst: f64,
    /// `(up_phi, down_phi, up_psi, down_psi)` for the first violations.
    pub witnesses: Vec<[f64; 4]>,
}

impl MonotonicityReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Samples `phi <= psi` on the two children and checks `T_h[phi] <= T_h[psi] + 1e-12`.
pub fn check_monotonicity(op: &SchemeOperator, h: f64, trials: usize, seed: u64) -> Result<MonotonicityReport> {
    op.validate(h)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = MonotonicityReport {
        trials,
        violations: 0,
        worst: 0.0,
        witnesses: Vec::new(),
    };
    for _ in 0..trials {
        let t = rng.random_range(0.0..1.0);
        let x = rng.random_range(-2.0..2.0);
        let (pu, pd): (f64, f64) = (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        // Occasionally leave one child untouched to probe the boundary.
        let mut bump = || -> f64 {
            if rng.random_bool(0.2) {
                0.0
            } else {
                rng.random_range(0.0..2.0)
            }
        };
        let (qu, qd) = (pu + bump(), pd + bump());
        let path = DiscretePath::origin(h, 1);
        let at = StepPoint {
            t,
            x,
            h,
            path: Some(&path),
        };
        let excess = op.apply(&at, pu, pd) - op.apply(&at, qu, qd);
        if excess > 1e-12 {
            out.violations += 1;
            out.worst = out.worst.max(excess);
            if out.witnesses.len() < 10 {
                out.witnesses.push([pu, pd, qu, qd]);
            }
        }
    }
    Ok(out)
}

/// Consistency deviation at one step size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRow {
    pub h: f64,
    pub max_deviation: f64,
}

/// `([c + phi](t', x') - T_h[[c + phi](t' + h, .)]) / h` against
/// `-q - G(t', x', c + phi, p + gamma x', gamma)` on perturbations
/// `t' = t + {0, h}`, `x' = x + {-h, 0, h}`, `c = {0, h}`.
///
/// The comparison is made at the perturbed point, so the deviation is the
/// truncation error of the operator itself.
pub fn check_consistency(
    op: &SchemeOperator,
    g: &Generator,
    phi: &Paraboloid,
    t: f64,
    x: f64,
    hs: &[f64],
) -> Result<Vec<ConsistencyRow>> {
    if phi.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            actual: phi.dim(),
        });
    }
    if hs.windows(2).any(|w| w[1] >= w[0]) {
        return Err(invalid("h-sequence must be decreasing"));
    }
    let (q, p, gm) = (phi.q(), phi.p()[0], phi.gamma()[0]);
    let psi = |c: f64, s: f64, y: f64| c + q * s + p * y + 0.5 * gm * y * y;
    hs.iter()
        .map(|&h| {
            op.validate(h)?;
            let s = h.sqrt();
            let mut worst: f64 = 0.0;
            for dt in [0.0, h] {
                for dx in [-h, 0.0, h] {
                    for c in [0.0, h] {
                        let (tp, xp) = (t + dt, x + dx);
                        let path = DiscretePath::origin(h, 1);
                        let at = StepPoint {
                            t: tp,
                            x: xp,
                            h,
                            path: Some(&path),
                        };
                        let up = psi(c, tp + h, xp + s);
                        let down = psi(c, tp + h, xp - s);
                        let ratio = (psi(c, tp, xp) - op.apply(&at, up, down)) / h;
                        let lphi = -q - g.eval(tp, &path, psi(c, tp, xp), &[p + gm * xp], &[gm]);
                        worst = worst.max((ratio - lphi).abs());
                    }
                }
            }
            Ok(ConsistencyRow {
                h,
                max_deviation: worst,
            })
        })
        .collect()
}

/// The default paraboloid grid: `q, p` in `{-2, ..., 2}` step 0.25, `gamma`
/// in `{-4, ..., 4}` step 0.5.
pub fn default_paraboloid_grid() -> Vec<Paraboloid> {
    let mut out = Vec::with_capacity(17 * 17 * 17);
    for qi in -8..=8 {
        for pi in -8..=8 {
            for gi in -8..=8 {
                out.push(Paraboloid::scalar(qi as f64 * 0.25, pi as f64 * 0.25, gi as f64 * 0.5));
            }
        }
    }
    out
}

/// Convenience for checking at the origin of a one-dimensional grid.
pub fn origin_point(grid: &TimeGrid) -> PathPoint {
    PathPoint::origin(grid.step(), 1)
}
