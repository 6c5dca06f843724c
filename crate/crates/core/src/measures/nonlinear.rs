use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::measures::tree::{backward, Carrier, NodeValues};

/// Componentwise bound `|lambda| <= L` on the drift controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftBound(f64);

impl DriftBound {
    pub fn new(bound: f64) -> Result<Self> {
        if !(bound.is_finite() && bound >= 0.0) {
            return Err(invalid(format!("drift bound must be finite and >= 0, got {bound}")));
        }
        Ok(Self(bound))
    }

    pub fn zero() -> Self {
        Self(0.0)
    }

    pub fn value(&self) -> f64 {
        self.0
    }

    /// `L * sqrt(h) <= 1`, so every `P_lambda` is a probability on the tree.
    pub fn check(&self, step: f64) -> Result<()> {
        check_drift(self.0, step)
    }
}

fn check_drift(lambda: f64, step: f64) -> Result<()> {
    let product = lambda.abs() * step.sqrt();
    if product > 1.0 + 1e-12 || product.is_nan() {
        return Err(Error::InvalidDrift {
            bound: lambda,
            step,
            product,
        });
    }
    Ok(())
}

/// `(p_up, p_down)` for drift `lambda` on `+-sqrt(h)` increments.
///
/// `p_up = (1 + lambda sqrt(h)) / 2`: one-step mean `lambda h`, variance
/// `h (1 - lambda^2 h)`.
pub fn step_probabilities(lambda: f64, step: f64) -> Result<(f64, f64)> {
    check_drift(lambda, step)?;
    let up = 0.5 * (1.0 + lambda * step.sqrt());
    Ok((up, 1.0 - up))
}

/// One step of the upper expectation: the larger of the endpoint-drift averages.
///
/// The objective is affine in `lambda`, so the sup over `[-L, L]` is attained
/// at `lambda* = L sgn(up - down)`, with `lambda* = 0` on ties.
pub(crate) fn ebar_step(up: f64, down: f64, bound: f64, sqrt_step: f64) -> (f64, f64) {
    let value = 0.5 * (up + down) + 0.5 * bound * sqrt_step * (up - down).abs();
    let lambda = if up > down {
        bound
    } else if up < down {
        -bound
    } else {
        0.0
    };
    (value, lambda)
}

pub(crate) fn eunder_step(up: f64, down: f64, bound: f64, sqrt_step: f64) -> (f64, f64) {
    let value = 0.5 * (up + down) - 0.5 * bound * sqrt_step * (up - down).abs();
    let lambda = if up > down {
        -bound
    } else if up < down {
        bound
    } else {
        0.0
    };
    (value, lambda)
}

/// Result of a nonlinear expectation on a carrier.
#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearExpectation {
    pub values: NodeValues,
    /// Extremal drift per interior node (levels `0..depth`).
    pub lambda_star: NodeValues,
}

impl NonlinearExpectation {
    pub fn root(&self) -> f64 {
        self.values.root()
    }

    /// CSV with header `level,node_id,value,lambda_star` (empty at leaves).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("level,node_id,value,lambda_star\n");
        let inner = self.lambda_star.num_levels();
        for (l, i, v) in self.values.iter() {
            if l < inner {
                let _ = writeln!(out, "{l},{i},{v},{}", self.lambda_star.get(l, i));
            } else {
                let _ = writeln!(out, "{l},{i},{v},");
            }
        }
        out
    }
}

fn run<C: Carrier + ?Sized>(
    carrier: &C,
    leaves: Vec<f64>,
    bound: DriftBound,
    step_fn: fn(f64, f64, f64, f64) -> (f64, f64),
) -> Result<NonlinearExpectation> {
    bound.check(carrier.step())?;
    let (l, s) = (bound.value(), carrier.sqrt_step());
    let values = backward(carrier, leaves, |_, _, u, d| Ok(step_fn(u, d, l, s).0))?;
    let lambda_star = lambda_from_values(carrier, &values, |u, d| step_fn(u, d, l, s).1);
    Ok(NonlinearExpectation {
        values,
        lambda_star,
    })
}

fn lambda_from_values<C: Carrier + ?Sized>(
    carrier: &C,
    values: &NodeValues,
    pick: impl Fn(f64, f64) -> f64,
) -> NodeValues {
    let levels = (0..carrier.depth())
        .map(|l| {
            (0..carrier.width(l))
                .map(|n| {
                    let (u, d) = carrier.children(l, n);
                    pick(values.get(l + 1, u), values.get(l + 1, d))
                })
                .collect()
        })
        .collect();
    NodeValues::from_levels(levels)
}

/// `sup_{|lambda| <= L} E^{P_lambda}[X]` by backward recursion, with the
/// per-node maximizing drift.
pub fn ebar_tree<C: Carrier + ?Sized>(
    carrier: &C,
    leaves: Vec<f64>,
    bound: DriftBound,
) -> Result<NonlinearExpectation> {
    run(carrier, leaves, bound, ebar_step)
}

/// `inf_{|lambda| <= L} E^{P_lambda}[X]`; equals `-ebar_tree(-X)`.
pub fn eunder_tree<C: Carrier + ?Sized>(
    carrier: &C,
    leaves: Vec<f64>,
    bound: DriftBound,
) -> Result<NonlinearExpectation> {
    run(carrier, leaves, bound, eunder_step)
}

/// An adapted drift control: one `lambda` per interior node.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftControl {
    bound: DriftBound,
    values: NodeValues,
}

impl DriftControl {
    pub fn new(bound: DriftBound, values: NodeValues) -> Result<Self> {
        for (l, n, v) in values.iter() {
            if !(v.abs() <= bound.value()) {
                return Err(invalid(format!(
                    "drift {v} at level {l} node {n} exceeds bound {}",
                    bound.value()
                )));
            }
        }
        Ok(Self { bound, values })
    }

    pub fn zero<C: Carrier + ?Sized>(carrier: &C) -> Self {
        Self {
            bound: DriftBound::zero(),
            values: NodeValues::filled(carrier, carrier.depth(), 0.0),
        }
    }

    pub fn constant<C: Carrier + ?Sized>(carrier: &C, lambda: f64) -> Result<Self> {
        Self::new(
            DriftBound::new(lambda.abs())?,
            NodeValues::filled(carrier, carrier.depth(), lambda),
        )
    }

    pub fn bound(&self) -> DriftBound {
        self.bound
    }

    pub fn get(&self, level: usize, node: usize) -> f64 {
        self.values.get(level, node)
    }

    pub fn values(&self) -> &NodeValues {
        &self.values
    }
}

/// `E^{P_lambda}[X | node]` at every node for a fixed control.
pub fn linear_expectation<C: Carrier + ?Sized>(
    carrier: &C,
    leaves: Vec<f64>,
    control: &DriftControl,
) -> Result<NodeValues> {
    control.bound().check(carrier.step())?;
    let s = carrier.sqrt_step();
    backward(carrier, leaves, |l, n, u, d| {
        let pu = 0.5 * (1.0 + control.get(l, n) * s);
        Ok(pu * u + (1.0 - pu) * d)
    })
}
