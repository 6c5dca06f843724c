//! Numerical laboratory for viscosity solutions of path-dependent PDEs on
//! discretized path space.
//!
//! The crate is organised bottom-up:
//!
//! - [`pathspace`]: uniform-grid paths, concatenation, shifted functionals and
//!   the pseudo-distance on stopped paths.
//! - [`measures`]: binomial scenario trees and recombining lattices, the
//!   upper/lower expectations over drift-controlled measures, Girsanov Monte
//!   Carlo.
//! - [`stopping`]: Snell envelopes under the upper expectation, optimal rules,
//!   the discrete Doob-Meyer decomposition and `D^eps` hitting times.
//! - [`funcalc`]: paraboloid test objects, generators, bump derivatives and
//!   Itô residuals.
//! - [`solvers`]: heat and BSDE representations, monotone schemes with their
//!   certification harnesses, a Markovian finite-difference reference.
//! - [`viscosity`]: tangency-in-mean tests, jet-based sub/supersolution checks,
//!   regular submartingale tests and comparison checks.

pub mod error;
pub mod funcalc;
pub mod measures;
pub mod pathspace;
pub mod solvers;
pub mod stopping;
pub mod viscosity;

pub use error::{Error, Result};
