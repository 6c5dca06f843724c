use std::fmt;
use std::sync::Arc;

use crate::error::{invalid, Result};
use crate::pathspace::{DiscretePath, PathFunctional, PathPoint};

/// A real process `u(t, omega)` read off the stopped path `omega_{. ^ t}`.
pub trait AdaptedProcess: Sync + Send {
    fn value(&self, prefix: &DiscretePath) -> Result<f64>;
}

impl AdaptedProcess for PathFunctional {
    fn value(&self, prefix: &DiscretePath) -> Result<f64> {
        self.eval(prefix)
    }
}

impl<F> AdaptedProcess for F
where
    F: Fn(&DiscretePath) -> Result<f64> + Sync + Send,
{
    fn value(&self, prefix: &DiscretePath) -> Result<f64> {
        self(prefix)
    }
}

type ScalarFn = dyn Fn(&DiscretePath) -> f64 + Send + Sync;
type VectorFn = dyn Fn(&DiscretePath) -> Vec<f64> + Send + Sync;

/// A process with analytic time derivative, gradient and Hessian.
#[derive(Clone)]
pub struct SmoothProcess {
    value: Arc<ScalarFn>,
    dt: Arc<ScalarFn>,
    grad: Arc<VectorFn>,
    /// Row-major `d x d`.
    hess: Arc<VectorFn>,
}

impl SmoothProcess {
    pub fn new(
        value: impl Fn(&DiscretePath) -> f64 + Send + Sync + 'static,
        dt: impl Fn(&DiscretePath) -> f64 + Send + Sync + 'static,
        grad: impl Fn(&DiscretePath) -> Vec<f64> + Send + Sync + 'static,
        hess: impl Fn(&DiscretePath) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            value: Arc::new(value),
            dt: Arc::new(dt),
            grad: Arc::new(grad),
            hess: Arc::new(hess),
        }
    }

    pub fn eval(&self, p: &DiscretePath) -> f64 {
        (self.value)(p)
    }

    pub fn time_derivative(&self, p: &DiscretePath) -> f64 {
        (self.dt)(p)
    }

    pub fn gradient(&self, p: &DiscretePath) -> Vec<f64> {
        (self.grad)(p)
    }

    pub fn hessian(&self, p: &DiscretePath) -> Vec<f64> {
        (self.hess)(p)
    }
}

impl fmt::Debug for SmoothProcess {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SmoothProcess(..)")
    }
}

impl AdaptedProcess for SmoothProcess {
    fn value(&self, prefix: &DiscretePath) -> Result<f64> {
        Ok(self.eval(prefix))
    }
}

/// Paraboloid test object `phi_s = q s + p . omega_s + 1/2 gamma : omega_s omega_s^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Paraboloid {
    q: f64,
    p: Vec<f64>,
    gamma: Vec<f64>,
}

impl Paraboloid {
    pub fn new(q: f64, p: Vec<f64>, gamma: Vec<f64>) -> Result<Self> {
        let d = p.len();
        if d == 0 || gamma.len() != d * d {
            return Err(invalid(format!(
                "paraboloid needs p of length d >= 1 and a d x d gamma, got {} and {}",
                d,
                gamma.len()
            )));
        }
        for i in 0..d {
            for j in 0..i {
                if (gamma[i * d + j] - gamma[j * d + i]).abs() > 1e-14 {
                    return Err(invalid("paraboloid gamma is not symmetric"));
                }
            }
        }
        if !q.is_finite() || p.iter().chain(&gamma).any(|v| !v.is_finite()) {
            return Err(invalid("paraboloid coefficients must be finite"));
        }
        Ok(Self { q, p, gamma })
    }

    pub fn scalar(q: f64, p: f64, gamma: f64) -> Self {
        Self {
            q,
            p: vec![p],
            gamma: vec![gamma],
        }
    }

    pub fn dim(&self) -> usize {
        self.p.len()
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    /// `1 + |q| + |p| + |gamma|` (Euclidean / Frobenius norms).
    pub fn size(&self) -> f64 {
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        1.0 + self.q.abs() + norm(&self.p) + norm(&self.gamma)
    }

    pub fn eval(&self, s: f64, x: &[f64]) -> f64 {
        let d = self.dim();
        let mut quad = 0.0;
        for i in 0..d {
            for j in 0..d {
                quad += x[i] * self.gamma[i * d + j] * x[j];
            }
        }
        self.q * s + self.p.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + 0.5 * quad
    }

    /// `phi` anchored at `anchor`: `s` and `omega_s` measured from the anchor.
    pub fn as_process(&self, anchor: &PathPoint) -> SmoothProcess {
        let t0 = anchor.time();
        let x0 = anchor.path().last().to_vec();
        let rel = move |p: &DiscretePath, x0: &[f64]| -> Vec<f64> {
            p.last().iter().zip(x0).map(|(a, b)| a - b).collect()
        };
        let (me, x0v) = (self.clone(), x0.clone());
        let value = move |p: &DiscretePath| me.eval(p.end_time() - t0, &rel(p, &x0v));
        let q = self.q;
        let (me, x0g) = (self.clone(), x0);
        let grad = move |p: &DiscretePath| {
            let x = rel(p, &x0g);
            let d = me.dim();
            (0..d)
                .map(|i| me.p[i] + (0..d).map(|j| me.gamma[i * d + j] * x[j]).sum::<f64>())
                .collect()
        };
        let gamma = self.gamma.clone();
        SmoothProcess::new(value, move |_| q, grad, move |_| gamma.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_examples() {
        assert_eq!(Paraboloid::scalar(0.0, 0.0, 0.0).eval(0.3, &[1.0]), 0.0);
        assert_eq!(Paraboloid::scalar(1.0, 0.0, 0.0).eval(0.5, &[2.0]), 0.5);
        assert_eq!(Paraboloid::scalar(0.0, 0.0, 2.0).eval(0.0, &[3.0]), 9.0);
    }

    #[test]
    fn validation() {
        assert!(Paraboloid::new(0.0, vec![1.0, 2.0], vec![1.0, 0.5, 0.5, 1.0]).is_ok());
        assert!(Paraboloid::new(0.0, vec![1.0, 2.0], vec![1.0, 0.5, 0.4, 1.0]).is_err());
        assert!(Paraboloid::new(0.0, vec![], vec![]).is_err());
        assert!(Paraboloid::new(f64::NAN, vec![0.0], vec![0.0]).is_err());
    }

    #[test]
    fn process_derivatives_match_expansion() {
        let phi = Paraboloid::new(0.3, vec![1.0, -1.0], vec![2.0, 0.5, 0.5, -1.0]).unwrap();
        let anchor = PathPoint::new(DiscretePath::from_rows(0.25, 2, vec![0.0, 0.0, 0.5, 1.0]).unwrap());
        let u = phi.as_process(&anchor);
        let p = DiscretePath::from_rows(0.25, 2, vec![0.0, 0.0, 0.5, 1.0, 1.5, 0.0]).unwrap();
        let x = [1.0, -1.0];
        assert!((u.eval(&p) - phi.eval(0.25, &x)).abs() < 1e-15);
        assert_eq!(u.time_derivative(&p), 0.3);
        assert_eq!(u.gradient(&p), vec![1.0 + 2.0 - 0.5, -1.0 + 0.5 + 1.0]);
        assert_eq!(u.hessian(&p), phi.gamma().to_vec());
        assert_eq!(u.eval(anchor.path()), 0.0);
    }
}
