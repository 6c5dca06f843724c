//! Optimal stopping under the upper expectation: Snell envelopes, optimal
//! rules, the discrete Doob-Meyer decomposition and `D^eps` hitting times.

mod snell;
mod time;

pub use snell::{
    doob_meyer, extremal_measure, hitting_time_eps, linear_snell, optimal_rule, snell,
    snell_absorbed, stopped_ebar, DoobMeyer, ObstacleProcess, SnellEnvelope,
};
pub use time::{enumerate_stopping_times, stopped_expectation, StoppingTime};
