use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::grid::grid_index;
use super::path::{concat, DiscretePath, PathPoint};
use crate::error::{invalid, Error, Result};

type EvalFn = dyn Fn(&DiscretePath) -> f64 + Send + Sync;

/// A user-supplied evaluator with its declared horizon and Lipschitz constant.
#[derive(Clone)]
pub struct CustomFunctional {
    pub name: String,
    pub horizon: Option<f64>,
    pub lipschitz: Option<f64>,
    eval: Arc<EvalFn>,
}

impl CustomFunctional {
    pub fn new(
        name: impl Into<String>,
        eval: impl Fn(&DiscretePath) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            horizon: None,
            lipschitz: None,
            eval: Arc::new(eval),
        }
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = Some(horizon);
        self
    }

    pub fn with_lipschitz(mut self, lipschitz: f64) -> Self {
        self.lipschitz = Some(lipschitz);
        self
    }
}

impl fmt::Debug for CustomFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomFunctional")
            .field("name", &self.name)
            .field("horizon", &self.horizon)
            .field("lipschitz", &self.lipschitz)
            .finish_non_exhaustive()
    }
}

/// A functional `xi(omega)` of a (possibly stopped) discrete path.
///
/// Evaluated on a prefix `omega_{. ^ t}`, a functional doubles as the adapted
/// process `u_t(omega) = xi(omega_{. ^ t})`: `Terminal` gives `omega_t`,
/// `FixedTime { time: T/2 }` gives `omega_{t ^ T/2}`, `RunningMax` the running
/// maximum so far.
#[derive(Debug, Clone)]
pub enum PathFunctional {
    Terminal {
        coord: usize,
    },
    FixedTime {
        time: f64,
        coord: usize,
    },
    RunningMax {
        coord: usize,
    },
    RunningMin {
        coord: usize,
    },
    /// `(1/t) * sum_{i<k} omega_{t_i} h`, the left Riemann time average.
    TimeAverage {
        coord: usize,
    },
    /// `sum_i omega^a_{t_i} (omega^b_{t_{i+1}} - omega^b_{t_i})`.
    PathwiseIntegral {
        integrand: usize,
        integrator: usize,
    },
    Power {
        inner: Box<PathFunctional>,
        exponent: i32,
    },
    PositivePart {
        inner: Box<PathFunctional>,
    },
    Affine {
        constant: f64,
        terms: Vec<(f64, PathFunctional)>,
    },
    /// `xi^{t, omega}(omega') = xi(omega (x)_t omega')`.
    Shifted {
        base: Arc<PathFunctional>,
        prefix: DiscretePath,
    },
    Custom(CustomFunctional),
}

impl PathFunctional {
    pub fn terminal() -> Self {
        Self::Terminal { coord: 0 }
    }

    pub fn fixed_time(time: f64) -> Self {
        Self::FixedTime { time, coord: 0 }
    }

    pub fn running_max() -> Self {
        Self::RunningMax { coord: 0 }
    }

    pub fn running_min() -> Self {
        Self::RunningMin { coord: 0 }
    }

    pub fn time_average() -> Self {
        Self::TimeAverage { coord: 0 }
    }

    pub fn pathwise_integral() -> Self {
        Self::PathwiseIntegral {
            integrand: 0,
            integrator: 1,
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::Affine {
            constant: c,
            terms: Vec::new(),
        }
    }

    pub fn scaled(self, coef: f64) -> Self {
        Self::Affine {
            constant: 0.0,
            terms: vec![(coef, self)],
        }
    }

    pub fn plus_constant(self, c: f64) -> Self {
        Self::Affine {
            constant: c,
            terms: vec![(1.0, self)],
        }
    }

    pub fn powi(self, exponent: i32) -> Self {
        Self::Power {
            inner: Box::new(self),
            exponent,
        }
    }

    pub fn positive_part(self) -> Self {
        Self::PositivePart {
            inner: Box::new(self),
        }
    }

    pub fn custom(
        name: impl Into<String>,
        eval: impl Fn(&DiscretePath) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self::Custom(CustomFunctional::new(name, eval))
    }

    /// Evaluates on `path`, read as the stopped path up to its last row.
    pub fn eval(&self, path: &DiscretePath) -> Result<f64> {
        let dim = path.dim();
        let need = |c: usize| {
            if c < dim {
                Ok(())
            } else {
                Err(Error::DimensionMismatch {
                    expected: c + 1,
                    actual: dim,
                })
            }
        };
        let k = path.steps();
        Ok(match self {
            Self::Terminal { coord } => {
                need(*coord)?;
                path.at(k, *coord)
            }
            Self::FixedTime { time, coord } => {
                need(*coord)?;
                path.at(grid_index(*time, path.step()).min(k), *coord)
            }
            Self::RunningMax { coord } => {
                need(*coord)?;
                (0..=k).fold(f64::NEG_INFINITY, |m, i| m.max(path.at(i, *coord)))
            }
            Self::RunningMin { coord } => {
                need(*coord)?;
                (0..=k).fold(f64::INFINITY, |m, i| m.min(path.at(i, *coord)))
            }
            Self::TimeAverage { coord } => {
                need(*coord)?;
                if k == 0 {
                    path.at(0, *coord)
                } else {
                    let h = path.step();
                    let sum: f64 = (0..k).map(|i| path.at(i, *coord) * h).sum();
                    sum / path.end_time()
                }
            }
            Self::PathwiseIntegral {
                integrand,
                integrator,
            } => {
                need(*integrand)?;
                need(*integrator)?;
                if dim < 2 {
                    return Err(Error::DimensionMismatch {
                        expected: 2,
                        actual: dim,
                    });
                }
                (0..k)
                    .map(|i| {
                        path.at(i, *integrand)
                            * (path.at(i + 1, *integrator) - path.at(i, *integrator))
                    })
                    .sum()
            }
            Self::Power { inner, exponent } => inner.eval(path)?.powi(*exponent),
            Self::PositivePart { inner } => inner.eval(path)?.max(0.0),
            Self::Affine { constant, terms } => {
                let mut acc = *constant;
                for (c, f) in terms {
                    acc += c * f.eval(path)?;
                }
                acc
            }
            Self::Shifted { base, prefix } => base.eval(&concat(prefix, path)?)?,
            Self::Custom(c) => (c.eval)(path),
        })
    }

    /// Time after which the path no longer influences the value (`None`: full path).
    pub fn horizon(&self) -> Option<f64> {
        match self {
            Self::FixedTime { time, .. } => Some(*time),
            Self::Power { inner, .. } | Self::PositivePart { inner } => inner.horizon(),
            Self::Affine { terms, .. } => {
                let mut out = Some(0.0f64);
                for (_, f) in terms {
                    out = match (out, f.horizon()) {
                        (Some(a), Some(b)) => Some(a.max(b)),
                        _ => None,
                    };
                }
                out
            }
            Self::Shifted { base, prefix } => base
                .horizon()
                .map(|hz| (hz - prefix.end_time()).max(0.0)),
            Self::Custom(c) => c.horizon,
            _ => None,
        }
    }

    /// Lipschitz constant with respect to the sup norm, when known.
    pub fn lipschitz(&self) -> Option<f64> {
        match self {
            Self::Terminal { .. }
            | Self::FixedTime { .. }
            | Self::RunningMax { .. }
            | Self::RunningMin { .. }
            | Self::TimeAverage { .. } => Some(1.0),
            Self::PathwiseIntegral { .. } | Self::Power { .. } => None,
            Self::PositivePart { inner } => inner.lipschitz(),
            Self::Affine { terms, .. } => terms
                .iter()
                .try_fold(0.0, |acc, (c, f)| f.lipschitz().map(|l| acc + c.abs() * l)),
            Self::Shifted { base, .. } => base.lipschitz(),
            Self::Custom(c) => c.lipschitz,
        }
    }

    /// The shifted functional `xi^{t, omega}` at `pt`.
    ///
    /// Shifting an already shifted functional concatenates the prefixes, so
    /// `(xi^{t, omega})^{s, omega'}` and `xi^{t+s, omega (x)_t omega'}` share
    /// one representation.
    pub fn shift(&self, pt: &PathPoint) -> Result<PathFunctional> {
        match self {
            Self::Shifted { base, prefix } => Ok(Self::Shifted {
                base: Arc::clone(base),
                prefix: concat(prefix, pt.path())?,
            }),
            other => Ok(Self::Shifted {
                base: Arc::new(other.clone()),
                prefix: pt.path().clone(),
            }),
        }
    }

    /// Splits a shifted functional into its base and the full prefix to
    /// prepend ahead of `start`.
    pub(crate) fn unshift(&self, start: &DiscretePath) -> Result<(&PathFunctional, DiscretePath)> {
        match self {
            Self::Shifted { base, prefix } => Ok((base.as_ref(), concat(prefix, start)?)),
            other => Ok((other, start.clone())),
        }
    }

    // Recombining-lattice support: functionals whose value is a function of
    // the current position and a few running summaries.

    /// Number of running-summary slots, or `None` if the functional does not
    /// recombine on a one-dimensional lattice.
    pub fn lattice_slots(&self) -> Option<usize> {
        match self {
            Self::Terminal { coord: 0 } => Some(0),
            Self::FixedTime { coord: 0, .. }
            | Self::RunningMax { coord: 0 }
            | Self::RunningMin { coord: 0 } => Some(1),
            Self::Power { inner, .. } | Self::PositivePart { inner } => inner.lattice_slots(),
            Self::Affine { terms, .. } => terms
                .iter()
                .try_fold(0, |acc, (_, f)| f.lattice_slots().map(|s| acc + s)),
            _ => None,
        }
    }

    pub(crate) fn lattice_init(&self, slots: &mut [f64]) {
        match self {
            Self::FixedTime { .. } => slots[0] = 0.0,
            Self::RunningMax { .. } => slots[0] = f64::NEG_INFINITY,
            Self::RunningMin { .. } => slots[0] = f64::INFINITY,
            Self::Power { inner, .. } | Self::PositivePart { inner } => inner.lattice_init(slots),
            Self::Affine { terms, .. } => {
                let mut off = 0;
                for (_, f) in terms {
                    let s = f.lattice_slots().unwrap_or(0);
                    f.lattice_init(&mut slots[off..off + s]);
                    off += s;
                }
            }
            _ => {}
        }
    }

    /// Folds row `index` (scalar value `x`) into the summaries.
    pub(crate) fn lattice_update(&self, slots: &mut [f64], index: usize, x: f64, h: f64) {
        match self {
            Self::FixedTime { time, .. } => {
                if index <= grid_index(*time, h) {
                    slots[0] = x;
                }
            }
            Self::RunningMax { .. } => slots[0] = slots[0].max(x),
            Self::RunningMin { .. } => slots[0] = slots[0].min(x),
            Self::Power { inner, .. } | Self::PositivePart { inner } => {
                inner.lattice_update(slots, index, x, h)
            }
            Self::Affine { terms, .. } => {
                let mut off = 0;
                for (_, f) in terms {
                    let s = f.lattice_slots().unwrap_or(0);
                    f.lattice_update(&mut slots[off..off + s], index, x, h);
                    off += s;
                }
            }
            _ => {}
        }
    }

    /// Value at a lattice node with current position `x`.
    pub(crate) fn lattice_value(&self, slots: &[f64], x: f64) -> f64 {
        match self {
            Self::Terminal { .. } => x,
            Self::FixedTime { .. } | Self::RunningMax { .. } | Self::RunningMin { .. } => slots[0],
            Self::Power { inner, exponent } => inner.lattice_value(slots, x).powi(*exponent),
            Self::PositivePart { inner } => inner.lattice_value(slots, x).max(0.0),
            Self::Affine { constant, terms } => {
                let mut acc = *constant;
                let mut off = 0;
                for (c, f) in terms {
                    let s = f.lattice_slots().unwrap_or(0);
                    acc += c * f.lattice_value(&slots[off..off + s], x);
                    off += s;
                }
                acc
            }
            _ => f64::NAN,
        }
    }
}

/// JSON-facing description of a catalog functional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FunctionalSpec {
    Terminal {
        #[serde(default)]
        coord: usize,
    },
    FixedTime {
        time: f64,
        #[serde(default)]
        coord: usize,
    },
    RunningMax {
        #[serde(default)]
        coord: usize,
    },
    RunningMin {
        #[serde(default)]
        coord: usize,
    },
    #[serde(alias = "average")]
    TimeAverage {
        #[serde(default)]
        coord: usize,
    },
    PathwiseIntegral {
        #[serde(default)]
        integrand: usize,
        #[serde(default = "one")]
        integrator: usize,
    },
    Power {
        inner: Box<FunctionalSpec>,
        exponent: i32,
    },
    PositivePart {
        inner: Box<FunctionalSpec>,
    },
    Affine {
        #[serde(default)]
        constant: f64,
        #[serde(default)]
        terms: Vec<AffineTerm>,
    },
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineTerm {
    pub coef: f64,
    pub functional: FunctionalSpec,
}

impl FunctionalSpec {
    pub fn build(&self) -> Result<PathFunctional> {
        Ok(match self {
            Self::Terminal { coord } => PathFunctional::Terminal { coord: *coord },
            Self::FixedTime { time, coord } => {
                if !(time.is_finite() && *time >= 0.0) {
                    return Err(invalid(format!("fixed-time: bad time {time}")));
                }
                PathFunctional::FixedTime {
                    time: *time,
                    coord: *coord,
                }
            }
            Self::RunningMax { coord } => PathFunctional::RunningMax { coord: *coord },
            Self::RunningMin { coord } => PathFunctional::RunningMin { coord: *coord },
            Self::TimeAverage { coord } => PathFunctional::TimeAverage { coord: *coord },
            Self::PathwiseIntegral {
                integrand,
                integrator,
            } => {
                if integrand == integrator {
                    return Err(invalid("pathwise-integral: integrand and integrator coincide"));
                }
                PathFunctional::PathwiseIntegral {
                    integrand: *integrand,
                    integrator: *integrator,
                }
            }
            Self::Power { inner, exponent } => inner.build()?.powi(*exponent),
            Self::PositivePart { inner } => inner.build()?.positive_part(),
            Self::Affine { constant, terms } => PathFunctional::Affine {
                constant: *constant,
                terms: terms
                    .iter()
                    .map(|t| Ok((t.coef, t.functional.build()?)))
                    .collect::<Result<_>>()?,
            },
        })
    }

    /// Smallest path dimension the functional can be evaluated on.
    pub fn min_dim(&self) -> usize {
        match self {
            Self::Terminal { coord }
            | Self::FixedTime { coord, .. }
            | Self::RunningMax { coord }
            | Self::RunningMin { coord }
            | Self::TimeAverage { coord } => coord + 1,
            Self::PathwiseIntegral {
                integrand,
                integrator,
            } => integrand.max(integrator) + 1,
            Self::Power { inner, .. } | Self::PositivePart { inner } => inner.min_dim(),
            Self::Affine { terms, .. } => terms
                .iter()
                .map(|t| t.functional.min_dim())
                .max()
                .unwrap_or(1),
        }
    }
}

/// One row of the functional catalog.
#[derive(Debug, Clone, Serialize)]
pub struct CatalogEntry {
    pub name: &'static str,
    pub params: &'static str,
    pub description: &'static str,
}

/// The built-in functionals, with their JSON parameter schemas.
pub fn builtin_functionals() -> Vec<CatalogEntry> {
    vec![
        CatalogEntry {
            name: "terminal",
            params: "{coord?: usize}",
            description: "value at the last grid point, omega_T (omega_t on a prefix)",
        },
        CatalogEntry {
            name: "fixed-time",
            params: "{time: f64, coord?: usize}",
            description: "value at the last grid point <= time, omega_{t ^ time}",
        },
        CatalogEntry {
            name: "running-max",
            params: "{coord?: usize}",
            description: "running maximum over grid points",
        },
        CatalogEntry {
            name: "running-min",
            params: "{coord?: usize}",
            description: "running minimum over grid points",
        },
        CatalogEntry {
            name: "time-average",
            params: "{coord?: usize}",
            description: "left Riemann time average (1/t) sum omega_{t_i} h",
        },
        CatalogEntry {
            name: "pathwise-integral",
            params: "{integrand?: usize = 0, integrator?: usize = 1}",
            description: "left-endpoint sum of omega^a d omega^b (needs d >= 2)",
        },
        CatalogEntry {
            name: "power",
            params: "{inner: functional, exponent: i32}",
            description: "integer power of another functional",
        },
        CatalogEntry {
            name: "positive-part",
            params: "{inner: functional}",
            description: "max(inner, 0)",
        },
        CatalogEntry {
            name: "affine",
            params: "{constant?: f64, terms?: [{coef: f64, functional}]}",
            description: "constant + sum coef * functional",
        },
    ]
}
