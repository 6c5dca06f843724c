//! Solution engines: heat and BSDE representations, the monotone scheme with
//! pluggable one-step operators and its certification harnesses, a Markovian
//! finite-difference reference, convergence and stability studies.

mod backend;
mod bsde;
mod fd;
mod heat;
mod scheme;
mod study;

pub use backend::{prepare, remaining_steps, Backend, Prepared};
pub use bsde::{solve_bsde, BsdeSolution};
pub use fd::{markovian_fd, FdGrid, FdSolution, MarkovGenerator};
pub use heat::{heat_nodes, solve_heat, HeatMethod, HeatValue};
pub use scheme::{
    check_consistency, check_monotonicity, default_paraboloid_grid, monotone_scheme,
    origin_point, ConsistencyRow, MonotonicityReport, OperatorSpec, SchemeOperator,
    SchemeSolution, StepPoint,
};
pub use study::{
    convergence_study, stability_experiment, ConvergenceRow, ConvergenceTable, Problem,
    Reference, StabilityReport, StabilityRow,
};
