//! Numerical toolkit for quantitative stratification of p-harmonic maps into spheres.
//!
//! Maps are sampled on regular lattices in dimension `m <= 4`. On top of the lattice
//! representation the crate provides a projected descent for the p-energy, the
//! normalized energy and its monotonicity identity, invariance defects and strata,
//! Jones beta numbers with a discrete Reifenberg test, and the covering engine that
//! produces packing and Minkowski-content estimates.

pub mod cli_reporting;
pub mod covering_engine;
pub mod energy_monitor;
pub mod error;
pub mod grid_core;
pub mod jones_reifenberg;
pub mod linalg;
pub mod minimizer;
pub mod scenes;
pub mod span_geometry;

pub use error::{Error, Result};
