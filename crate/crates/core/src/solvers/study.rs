use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::funcalc::Driver;
use crate::pathspace::{PathFunctional, PathPoint, TimeGrid};
use crate::solvers::backend::Backend;
use crate::solvers::bsde::solve_bsde;
use crate::solvers::scheme::{monotone_scheme, SchemeOperator};

/// A problem solved at the origin for a sequence of step counts.
#[derive(Debug, Clone)]
pub enum Problem {
    Bsde { driver: Driver, xi: PathFunctional },
    Scheme { op: SchemeOperator, xi: PathFunctional },
}

impl Problem {
    pub fn heat(xi: PathFunctional) -> Self {
        Self::Scheme {
            op: SchemeOperator::Heat,
            xi,
        }
    }

    /// Root value with `n` steps on `[0, horizon]`.
    pub fn solve(&self, horizon: f64, n: usize, backend: Backend) -> Result<f64> {
        let g = TimeGrid::new(horizon, n)?;
        let pt = PathPoint::origin(g.step(), 1);
        match self {
            Self::Bsde { driver, xi } => Ok(solve_bsde(driver, xi, &g, &pt, backend)?.root()),
            Self::Scheme { op, xi } => Ok(monotone_scheme(op, xi, &g, &pt, backend)?.root()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Reference {
    ClosedForm { value: f64 },
    /// The finest `n` in the sequence serves as reference.
    FinestGrid,
    /// An externally computed value (e.g. a finite-difference solution).
    External { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub h: f64,
    pub value: f64,
    pub error: Option<f64>,
    /// Previous error over this error.
    pub ratio: Option<f64>,
    pub order_est: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    pub reference: f64,
    /// Set when the reference is the finest grid.
    pub self_referenced: bool,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl ConvergenceTable {
    /// CSV with header `n,h,value,error,ratio,order_est`; undefined cells are empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,h,value,error,ratio,order_est\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.n,
                r.h,
                r.value,
                opt(r.error),
                opt(r.ratio),
                opt(r.order_est)
            );
        }
        out
    }
}

pub fn convergence_study(
    problem: &Problem,
    horizon: f64,
    ns: &[usize],
    reference: Reference,
    backend: Backend,
) -> Result<ConvergenceTable> {
    if ns.is_empty() || ns.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("n-sequence must be non-empty and increasing"));
    }
    let values = ns
        .iter()
        .map(|n| problem.solve(horizon, *n, backend))
        .collect::<Result<Vec<_>>>()?;
    let (refv, self_ref) = match reference {
        Reference::ClosedForm { value } | Reference::External { value } => (value, false),
        Reference::FinestGrid => (*values.last().expect("non-empty"), true),
    };
    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(ns.len());
    for (k, (&n, &value)) in ns.iter().zip(&values).enumerate() {
        let error = if self_ref && k + 1 == ns.len() {
            None
        } else {
            Some((value - refv).abs())
        };
        let (ratio, order_est) = match (k.checked_sub(1).and_then(|j| rows[j].error), error) {
            (Some(prev), Some(e)) if e > 0.0 && prev > 0.0 => {
                let r = prev / e;
                (Some(r), Some(r.ln() / (n as f64 / ns[k - 1] as f64).ln()))
            }
            _ => (None, None),
        };
        rows.push(ConvergenceRow {
            n,
            h: horizon / n as f64,
            value,
            error,
            ratio,
            order_est,
        });
    }
    Ok(ConvergenceTable {
        rows,
        reference: refv,
        self_referenced: self_ref,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityRow {
    pub eps: f64,
    pub value: f64,
    pub deviation: f64,
    /// `eps T e^{L_0 T}`.
    pub comparison_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub base: f64,
    pub rows: Vec<StabilityRow>,
    /// Least-squares `C` in `deviation ~ C eps`.
    pub slope: f64,
}

/// Solves with `F + eps` for each `eps` and compares against `F`.
pub fn stability_experiment(
    driver: &Driver,
    xi: &PathFunctional,
    horizon: f64,
    n: usize,
    eps: &[f64],
    backend: Backend,
) -> Result<StabilityReport> {
    let Driver::Affine {
        y_coef,
        z_abs,
        constant,
    } = driver
    else {
        return Err(invalid("stability experiment needs an affine driver"));
    };
    let g = TimeGrid::new(horizon, n)?;
    let pt = PathPoint::origin(g.step(), 1);
    let base = solve_bsde(driver, xi, &g, &pt, backend)?.root();
    let l0 = driver.lipschitz();
    let rows = eps
        .iter()
        .map(|&e| {
            let perturbed = Driver::affine(*y_coef, *z_abs, constant + e);
            let value = solve_bsde(&perturbed, xi, &g, &pt, backend)?.root();
            Ok(StabilityRow {
                eps: e,
                value,
                deviation: (value - base).abs(),
                comparison_bound: e.abs() * horizon * (l0 * horizon).exp(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (num, den) = rows
        .iter()
        .fold((0.0, 0.0), |(a, b), r| (a + r.eps * r.deviation, b + r.eps * r.eps));
    Ok(StabilityReport {
        base,
        slope: if den > 0.0 { num / den } else { 0.0 },
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::DriftBound;

    #[test]
    fn heat_terminal_has_zero_error() {
        let t = convergence_study(
            &Problem::heat(PathFunctional::terminal()),
            1.0,
            &[8, 16, 32],
            Reference::ClosedForm { value: 0.0 },
            Backend::Auto,
        )
        .unwrap();
        assert!(t.rows.iter().all(|r| r.error == Some(0.0) && r.ratio.is_none()));
        assert!(t.to_csv().starts_with("n,h,value,error,ratio,order_est\n8,0.125,0,0,,\n"));
    }

    #[test]
    fn semilinear_first_order() {
        let p = Problem::Bsde {
            driver: Driver::affine(-1.0, 0.0, 1.0),
            xi: PathFunctional::constant(0.0),
        };
        let t = convergence_study(&p, 1.0, &[32, 64, 128, 256], Reference::ClosedForm { value: 1.0 - (-1.0f64).exp() }, Backend::Auto).unwrap();
        for r in &t.rows[1..] {
            assert!((1.7..=2.3).contains(&r.ratio.unwrap()));
            assert!((r.order_est.unwrap() - 1.0).abs() < 0.2);
        }
        let s = convergence_study(&p, 1.0, &[16, 32, 64], Reference::FinestGrid, Backend::Auto).unwrap();
        assert!(s.self_referenced);
        assert!(s.rows[2].error.is_none());
        assert!(convergence_study(&p, 1.0, &[32, 16], Reference::FinestGrid, Backend::Auto).is_err());
    }

    #[test]
    fn drift_hjb_exact_at_every_n() {
        let p = Problem::Scheme {
            op: SchemeOperator::DriftHjb(DriftBound::new(0.7).unwrap()),
            xi: PathFunctional::terminal(),
        };
        let t = convergence_study(&p, 1.0, &[4, 16, 64, 256], Reference::ClosedForm { value: 0.7 }, Backend::Auto).unwrap();
        assert!(t.rows.iter().all(|r| r.error.unwrap() < 1e-12));
    }

    #[test]
    fn stability_shifts() {
        let zero = stability_experiment(&Driver::zero(), &PathFunctional::constant(0.0), 1.0, 16, &[0.1, 0.01], Backend::Auto).unwrap();
        for r in &zero.rows {
            assert!((r.value - r.eps).abs() < 1e-15);
        }
        let lin = Driver::affine(-1.0, 0.0, 1.0);
        let n = 64;
        let rep = stability_experiment(&lin, &PathFunctional::constant(0.0), 1.0, n, &[0.1, 0.01, 0.001], Backend::Auto).unwrap();
        for r in &rep.rows {
            assert!(r.deviation <= r.eps * (1.0 - (-1.0f64).exp()) + 10.0 / n as f64);
            assert!(r.deviation <= r.comparison_bound);
        }
        assert!((rep.slope - (1.0 - (-1.0f64).exp())).abs() < 0.02);
    }
}
