//! Overdamped one-body dynamics of colloids with hydrodynamic interactions.
//!
//! The crate provides
//! - [`model`]: periodic grids, fields and conservative discrete calculus;
//! - [`kernels`]: potentials, pair correlation and friction tensors;
//! - [`fredholm`]: the flux integral equation and the density-dependent diffusion tensor;
//! - [`smoluchowski`]: conservative time stepping and the formulation comparison;
//! - [`kinetic`]: a Hermite-spectral phase-space solver and expansion diagnostics;
//! - [`langevin`]: an N-particle underdamped Langevin ensemble;
//! - [`analysis`]: convergence studies and property suites;
//! - [`cli`]: configuration, orchestration and output management.

pub mod analysis;
pub mod cli;
pub mod error;
pub mod fredholm;
pub mod kernels;
pub mod kinetic;
pub mod langevin;
pub mod model;
pub mod problem;
pub mod smoluchowski;
pub mod stats;

pub use error::{Error, Result};
