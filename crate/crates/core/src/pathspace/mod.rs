//! Discrete canonical path space: grids, paths, concatenation, shifts, the
//! pseudo-distance on stopped paths and the built-in path functionals.

mod functional;
mod grid;
mod path;

pub use functional::{
    builtin_functionals, AffineTerm, CatalogEntry, CustomFunctional, FunctionalSpec,
    PathFunctional,
};
pub use grid::TimeGrid;
pub use path::{concat, pseudo_distance, DiscretePath, PathPoint};
