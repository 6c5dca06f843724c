//! Drift-controlled measure family `{P_lambda : |lambda| <= L}` on binomial
//! carriers: exact upper/lower expectations by backward recursion, linear
//! expectations under a fixed control, and Girsanov-weighted Monte Carlo.

mod lattice;
mod montecarlo;
mod nonlinear;
mod tree;

pub use lattice::{Lattice, DEFAULT_LATTICE_BUDGET};
pub use montecarlo::{expectation_mc, girsanov_weight, sample_path, DriftRule, McEstimate};
pub(crate) use nonlinear::{ebar_step, eunder_step};
pub use nonlinear::{
    ebar_tree, eunder_tree, linear_expectation, step_probabilities, DriftBound, DriftControl,
    NonlinearExpectation,
};
pub use tree::{backward, Carrier, NodeValues, ScenarioTree, DEFAULT_DEPTH_CAP};
