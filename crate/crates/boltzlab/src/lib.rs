//! Numerical laboratory for the space-homogeneous Boltzmann equation with
//! non-cutoff, very soft collision kernels.
//!
//! The crate builds regularized solutions with a truncated kernel, artificial
//! viscosity and a monotone Duhamel iteration, evaluates the functionals used
//! in partial-regularity arguments, and runs a singular-time detection
//! pipeline on the resulting time series.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod collision;
pub mod error;
pub mod estimates;
pub mod grid;
pub mod kernel;
mod quad;
pub mod singularity;
pub mod solver;
pub mod truncation;

pub use error::{Error, Result};
pub use grid::{Density, Hydro, HydroBounds, VelocityGrid};
pub use kernel::{CancellationDensity, KernelMatrix, KernelParams};
pub use truncation::TruncationFunctional;
