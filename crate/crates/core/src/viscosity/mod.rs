//! Viscosity notions on discretized path space: localization, tangency in
//! mean, jet-based sub/supersolution checks, regular submartingale checks and
//! comparison.

mod localization;
mod martingale;
mod process;
mod tangency;

pub use localization::{min_exit, Localization};
pub use martingale::{
    comparison_check, comparison_on_tree, equivalence_experiment, regular_submartingale_check,
    sample_points, Candidate, ComparisonReport, ComparisonVerdict, EquivalenceReport,
    EquivalenceRow, SubmartingaleReport,
};
pub use process::{HeatSolution, ProcessSum, TimeSlope};
pub use tangency::{
    check_sample, subsolution_check, supersolution_check, tangency_in_mean, viscosity_check,
    CheckSettings, JetSearch, LocalSample, Mode, TangencyReport, Tolerance, Verdict,
    ViscosityReport, Witness,
};
