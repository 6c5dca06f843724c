//! Config-driven experiment runner for `ppde-core`.
//!
//! A JSON [`ExperimentConfig`] lists experiments; [`run`] executes them and
//! returns a [`RunReport`] whose checks decide the exit status.

pub mod catalog;
pub mod config;
pub mod report;
pub mod runner;

pub use catalog::list_catalogs;
pub use config::{Experiment, ExperimentConfig, ExperimentSpec};
pub use report::{Check, ExperimentResult, RunReport, Table};
pub use runner::{make_points, run};

/// Builds the global thread pool, capped by `PPDE_THREADS` when set.
pub fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("PPDE_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| anyhow::anyhow!("PPDE_THREADS must be a positive integer, got '{v}'"))?;
        if n == 0 {
            anyhow::bail!("PPDE_THREADS must be a positive integer, got 0");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}
