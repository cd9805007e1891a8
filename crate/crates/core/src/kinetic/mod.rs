//! Hermite-spectral solver for the one-body phase-space equation in one
//! dimension, and checks of its overdamped expansion.

pub mod diagnostics;
pub mod evolve;
pub mod field;
pub mod hermite;
pub mod operators;
pub mod psi;

pub use diagnostics::{
    hilbert_diagnostics, linearized_operator, solvability_residuals, solvability_residuals_with, HilbertReport,
    LinearizedOperator, SolvabilityReport,
};
pub use evolve::{evolve_kinetic, KineticSolver, KineticTrajectory};
pub use field::{HermiteField, KineticParams};
pub use hermite::GaussHermite;
pub use operators::{apply_l0, apply_l1, apply_n0, apply_n1, kinetic_rhs};
pub use psi::{psi_evolution, psi_source, PsiTrajectory};
