//! Test objects and smoothness diagnostics: paraboloids, smooth processes,
//! generators, bump derivatives and Itô residuals.

mod derivatives;
mod generator;
mod process;

pub use derivatives::{
    classical_residual, default_bump, discrete_derivatives, ito_residual, rms, time_derivative,
    vertical_derivatives, Derivatives,
};
pub use generator::{
    check_ellipticity, check_lipschitz, Driver, Generator, GeneratorSpec, SpotCheck,
};
pub use process::{AdaptedProcess, Paraboloid, SmoothProcess};
