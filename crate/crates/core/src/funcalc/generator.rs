use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::pathspace::DiscretePath;

type DriverFn = dyn Fn(f64, &DiscretePath, f64, &[f64]) -> f64 + Send + Sync;
type GeneratorFn = dyn Fn(f64, &DiscretePath, f64, &[f64], &[f64]) -> f64 + Send + Sync;

/// Semilinear driver `F(t, omega, y, z)`.
#[derive(Clone)]
pub enum Driver {
    /// `a y + L |z|_1 + b`.
    Affine { y_coef: f64, z_abs: f64, constant: f64 },
    Custom {
        name: String,
        f: Arc<DriverFn>,
        lipschitz: f64,
    },
}

impl Driver {
    pub fn affine(y_coef: f64, z_abs: f64, constant: f64) -> Self {
        Self::Affine {
            y_coef,
            z_abs,
            constant,
        }
    }

    pub fn zero() -> Self {
        Self::affine(0.0, 0.0, 0.0)
    }

    pub fn custom(
        name: impl Into<String>,
        lipschitz: f64,
        f: impl Fn(f64, &DiscretePath, f64, &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self::Custom {
            name: name.into(),
            f: Arc::new(f),
            lipschitz,
        }
    }

    pub fn eval(&self, t: f64, path: &DiscretePath, y: f64, z: &[f64]) -> f64 {
        match self {
            Self::Affine {
                y_coef,
                z_abs,
                constant,
            } => y_coef * y + z_abs * z.iter().map(|v| v.abs()).sum::<f64>() + constant,
            Self::Custom { f, .. } => f(t, path, y, z),
        }
    }

    /// Declared Lipschitz constant in `(y, z)` for the norm `|y| + |z|_1`.
    pub fn lipschitz(&self) -> f64 {
        match self {
            Self::Affine { y_coef, z_abs, .. } => y_coef.abs().max(z_abs.abs()),
            Self::Custom { lipschitz, .. } => *lipschitz,
        }
    }

    /// Sup of `|F(t, omega, 0, 0)|` when known.
    pub fn sup_at_zero(&self) -> Option<f64> {
        match self {
            Self::Affine { constant, .. } => Some(constant.abs()),
            Self::Custom { .. } => None,
        }
    }
}

impl fmt::Debug for Driver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Affine {
                y_coef,
                z_abs,
                constant,
            } => write!(f, "Affine({y_coef} y + {z_abs} |z| + {constant})"),
            Self::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

/// Generator `G(t, omega, y, z, gamma)` of a path-dependent PDE.
#[derive(Clone)]
pub enum Generator {
    /// `1/2 tr gamma`.
    Heat,
    /// `1/2 tr gamma + F(t, omega, y, z)`.
    Semilinear(Driver),
    /// `1/2 tr gamma + L |z|_1`, the generator of the upper expectation.
    DriftHjb { bound: f64 },
    Custom {
        name: String,
        g: Arc<GeneratorFn>,
        lipschitz: f64,
    },
}

fn half_trace(gamma: &[f64], d: usize) -> f64 {
    0.5 * (0..d).map(|i| gamma[i * d + i]).sum::<f64>()
}

impl Generator {
    pub fn custom(
        name: impl Into<String>,
        lipschitz: f64,
        g: impl Fn(f64, &DiscretePath, f64, &[f64], &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self::Custom {
            name: name.into(),
            g: Arc::new(g),
            lipschitz,
        }
    }

    pub fn eval(&self, t: f64, path: &DiscretePath, y: f64, z: &[f64], gamma: &[f64]) -> f64 {
        let d = z.len();
        match self {
            Self::Heat => half_trace(gamma, d),
            Self::Semilinear(f) => half_trace(gamma, d) + f.eval(t, path, y, z),
            Self::DriftHjb { bound } => {
                half_trace(gamma, d) + bound * z.iter().map(|v| v.abs()).sum::<f64>()
            }
            Self::Custom { g, .. } => g(t, path, y, z, gamma),
        }
    }

    /// Declared Lipschitz constant `L_0` in `(y, z)`.
    pub fn lipschitz(&self) -> f64 {
        match self {
            Self::Heat => 0.0,
            Self::Semilinear(f) => f.lipschitz(),
            Self::DriftHjb { bound } => bound.abs(),
            Self::Custom { lipschitz, .. } => *lipschitz,
        }
    }

    pub fn name(&self) -> String {
        match self {
            Self::Heat => "heat".into(),
            Self::Semilinear(f) => format!("semilinear {f:?}"),
            Self::DriftHjb { bound } => format!("drift-hjb L={bound}"),
            Self::Custom { name, .. } => name.clone(),
        }
    }
}

impl fmt::Debug for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// JSON-facing generator description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GeneratorSpec {
    Heat,
    /// `F = y_coef y + z_abs |z|_1 + constant`.
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

impl GeneratorSpec {
    pub fn build(&self) -> Result<Generator> {
        Ok(match self {
            Self::Heat => Generator::Heat,
            Self::Semilinear {
                y_coef,
                z_abs,
                constant,
            } => {
                if ![y_coef, z_abs, constant].iter().all(|v| v.is_finite()) {
                    return Err(invalid("semilinear: coefficients must be finite"));
                }
                Generator::Semilinear(Driver::affine(*y_coef, *z_abs, *constant))
            }
            Self::DriftHjb { bound } => {
                if !(bound.is_finite() && *bound >= 0.0) {
                    return Err(invalid(format!("drift-hjb: bound must be >= 0, got {bound}")));
                }
                Generator::DriftHjb { bound: *bound }
            }
        })
    }
}

/// Outcome of a randomized spot-check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpotCheck {
    pub trials: usize,
    pub violations: usize,
    pub worst: f64,
}

impl SpotCheck {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

fn sample_state(rng: &mut ChaCha8Rng, d: usize) -> (f64, DiscretePath, f64, Vec<f64>, Vec<f64>) {
    let t = rng.random_range(0.0..1.0);
    let path = DiscretePath::from_rows_unchecked(
        0.1,
        d,
        (0..2 * d).map(|i| if i < d { 0.0 } else { rng.random_range(-2.0..2.0) }).collect(),
    );
    let y = rng.random_range(-3.0..3.0);
    let z = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
    let mut g = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let v = rng.random_range(-3.0..3.0);
            g[i * d + j] = v;
            g[j * d + i] = v;
        }
    }
    (t, path, y, z, g)
}

/// `G` is nondecreasing in `gamma` along random positive semidefinite increments.
pub fn check_ellipticity(g: &Generator, d: usize, trials: usize, seed: u64) -> SpotCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = SpotCheck {
        trials,
        violations: 0,
        worst: 0.0,
    };
    for _ in 0..trials {
        let (t, path, y, z, gamma) = sample_state(&mut rng, d);
        // v v^T is positive semidefinite.
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let bumped: Vec<f64> = (0..d * d).map(|k| gamma[k] + v[k / d] * v[k % d]).collect();
        let drop = g.eval(t, &path, y, &z, &gamma) - g.eval(t, &path, y, &z, &bumped);
        if drop > 1e-12 {
            out.violations += 1;
            out.worst = out.worst.max(drop);
        }
    }
    out
}

/// `|G(y, z) - G(y', z')| <= L_0 (|y - y'| + |z - z'|_1)` on random pairs.
pub fn check_lipschitz(g: &Generator, d: usize, trials: usize, seed: u64) -> SpotCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l0 = g.lipschitz();
    let mut out = SpotCheck {
        trials,
        violations: 0,
        worst: 0.0,
    };
    for _ in 0..trials {
        let (t, path, y, z, gamma) = sample_state(&mut rng, d);
        let y2 = rng.random_range(-3.0..3.0);
        let z2: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let dist = (y - y2).abs() + z.iter().zip(&z2).map(|(a, b)| (a - b).abs()).sum::<f64>();
        let diff = (g.eval(t, &path, y, &z, &gamma) - g.eval(t, &path, y2, &z2, &gamma)).abs();
        let excess = diff - l0 * dist;
        if excess > 1e-12 * (1.0 + diff) {
            out.violations += 1;
            out.worst = out.worst.max(excess);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt() -> DiscretePath {
        DiscretePath::origin(0.1, 1)
    }

    #[test]
    fn evaluation() {
        let p = pt();
        assert_eq!(Generator::Heat.eval(0.0, &p, 5.0, &[1.0], &[2.0]), 1.0);
        let semi = Generator::Semilinear(Driver::affine(-1.0, 0.0, 1.0));
        assert_eq!(semi.eval(0.0, &p, 0.5, &[3.0], &[0.0]), 0.5);
        let hjb = Generator::DriftHjb { bound: 0.5 };
        assert_eq!(hjb.eval(0.0, &p, 0.0, &[-2.0], &[2.0]), 2.0);
        assert_eq!(semi.lipschitz(), 1.0);
    }

    #[test]
    fn builtins_pass_spot_checks() {
        let gens = [
            Generator::Heat,
            Generator::Semilinear(Driver::affine(-1.0, 0.3, 1.0)),
            Generator::DriftHjb { bound: 0.7 },
        ];
        for g in &gens {
            for d in [1, 2] {
                assert!(check_ellipticity(g, d, 2000, 1).passed(), "{g:?}");
                assert!(check_lipschitz(g, d, 2000, 2).passed(), "{g:?}");
            }
        }
    }

    #[test]
    fn spot_checks_catch_bad_generators() {
        let anti = Generator::custom("anti-elliptic", 0.0, |_, _, _, _, g| -g[0]);
        assert!(!check_ellipticity(&anti, 1, 200, 3).passed());
        let understated = Generator::custom("steep", 1.0, |_, _, y, _, _| 5.0 * y);
        assert!(!check_lipschitz(&understated, 1, 200, 4).passed());
    }

    #[test]
    fn spec_json() {
        let s: GeneratorSpec =
            serde_json::from_str(r#"{"name":"semilinear","y_coef":-1,"constant":1}"#).unwrap();
        assert!(matches!(s.build().unwrap(), Generator::Semilinear(_)));
        let h: GeneratorSpec = serde_json::from_str(r#"{"name":"drift-hjb","bound":0.5}"#).unwrap();
        assert_eq!(h.build().unwrap().lipschitz(), 0.5);
        assert!(serde_json::from_str::<GeneratorSpec>(r#"{"name":"nope"}"#).is_err());
        assert!(GeneratorSpec::DriftHjb { bound: -1.0 }.build().is_err());
    }
}
