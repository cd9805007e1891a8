//! Checks of the expansion structure: moment diagnostics of evolved fields,
//! solvability integrals, and the linearised collision operator.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::field::HermiteField;
use super::hermite::{factorial, GaussHermite};
use super::operators::{apply_l1, apply_n1, cross_friction_matrix, self_friction};
use crate::error::{Error, Result};
use crate::fredholm::solve_a;
use crate::model::ScalarField;
use crate::problem::Problem;
use crate::smoluchowski::rhs_new;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HilbertReport {
    pub epsilon: f64,
    pub mass: f64,
    pub degree_norms: Vec<f64>,
    /// `(sum_{n>=2} ||gamma_n||^2)^{1/2}`.
    pub tail_norm: f64,
    /// `||gamma_1||`.
    pub flux_moment: f64,
    /// `||a||` with `a` from the Fredholm solve at `gamma_0`.
    pub fredholm_flux: f64,
    /// `||gamma_1 / eps - a||`.
    pub flux_consistency: f64,
    /// `||gamma_0 - rho_ref||_1` when a reference density is given.
    pub psi_estimate_l1: Option<f64>,
}

pub fn hilbert_diagnostics(
    problem: &Problem,
    f: &HermiteField,
    epsilon: f64,
    rho_ref: Option<&ScalarField>,
) -> Result<HilbertReport> {
    f.check_grid()?;
    let rho = f.rho();
    let a = solve_a(problem, &rho, 0.0)?.a.component(0);
    let mut diff = f.momentum();
    diff.scale(1.0 / epsilon);
    diff.axpy(-1.0, &a);
    let psi_estimate_l1 = rho_ref.map(|r| rho.l1_distance(r));
    Ok(HilbertReport {
        epsilon,
        mass: f.mass(),
        degree_norms: f.degree_norms(),
        tail_norm: f.tail_norm(),
        flux_moment: f.momentum().l2_norm(),
        fredholm_flux: a.l2_norm(),
        flux_consistency: diff.l2_norm(),
        psi_estimate_l1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolvabilityReport {
    /// Largest `|int dp (L1 f0 + N1(f0, f0))|` over cells.
    pub order_minus_one: f64,
    /// Largest `|int dp (L1 f1 + N1(f0, f1) + N1(f1, f0) - df0/dt)|` over cells.
    pub order_zero: f64,
}

/// `int dp` of each cell's phase-space function by quadrature of the
/// reconstruction at the nodes.
fn momentum_integral(f: &HermiteField, quad: &GaussHermite) -> Vec<f64> {
    (0..f.grid.len())
        .map(|i| {
            let c: Vec<f64> = f.coeffs.iter().map(|c| c[i]).collect();
            quad.integrate(&quad.evaluate(&c))
        })
        .collect()
}

/// Solvability integrals with `f1 = a p phi`, `a` and `d rho / dt` supplied.
pub fn solvability_residuals_with(
    problem: &Problem,
    rho0: &ScalarField,
    a: &ScalarField,
    drho_dt: &ScalarField,
    quad_nodes: usize,
) -> Result<SolvabilityReport> {
    let nmax = 3;
    if quad_nodes < 2 * nmax {
        return Err(Error::InvalidInput(format!("need at least {} quadrature nodes", 2 * nmax)));
    }
    let quad = GaussHermite::new(quad_nodes);
    let f0 = HermiteField::maxwellian(rho0, nmax);
    f0.check_grid()?;
    let mut first = apply_l1(problem, &f0);
    first.axpy(1.0, &apply_n1(problem, &f0, &f0));
    let order_minus_one = momentum_integral(&first, &quad).iter().fold(0.0f64, |m, v| m.max(v.abs()));

    let mut f1 = HermiteField::zeros(rho0.grid, nmax);
    f1.coeffs[1].clone_from(&a.values);
    let mut second = apply_l1(problem, &f1);
    second.axpy(1.0, &apply_n1(problem, &f0, &f1));
    second.axpy(1.0, &apply_n1(problem, &f1, &f0));
    for (v, d) in second.coeffs[0].iter_mut().zip(&drho_dt.values) {
        *v -= d;
    }
    let order_zero = momentum_integral(&second, &quad).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(SolvabilityReport { order_minus_one, order_zero })
}

/// Solvability integrals with `a` from the Fredholm solve and the density
/// rate from the Smoluchowski right-hand side (in rescaled time).
pub fn solvability_residuals(problem: &Problem, rho0: &ScalarField, quad_nodes: usize) -> Result<SolvabilityReport> {
    let a = solve_a(problem, rho0, 0.0)?.a.component(0);
    let mut rate = rhs_new(problem, rho0, 0.0)?;
    rate.scale(1.0 / problem.d0());
    solvability_residuals_with(problem, rho0, &a, &rate, quad_nodes)
}

/// Matrix of the linearised collision operator
/// `L~ h = L0 h + N0(f0, h) + N0(h, f0)` about `f0 = rho0 phi`, acting on
/// coefficient vectors ordered degree-major (`n * cells + i`).
#[derive(Debug, Clone)]
pub struct LinearizedOperator {
    pub nmax: usize,
    pub cells: usize,
    pub matrix: DMatrix<f64>,
    /// Diagonal of the `L^2(1/f0)` inner product, `n! w / rho0_i`.
    pub weight: Vec<f64>,
}

impl LinearizedOperator {
    pub fn index(&self, n: usize, i: usize) -> usize {
        n * self.cells + i
    }

    /// Square block coupling degree `m` (columns) into degree `n` (rows).
    pub fn block(&self, n: usize, m: usize) -> DMatrix<f64> {
        self.matrix.view((n * self.cells, m * self.cells), (self.cells, self.cells)).into_owned()
    }

    /// `W L~`, symmetric when the operator is self-adjoint in the weighted product.
    pub fn weighted(&self) -> DMatrix<f64> {
        let mut m = self.matrix.clone();
        for (r, w) in self.weight.iter().enumerate() {
            m.row_mut(r).scale_mut(*w);
        }
        m
    }
}

/// Assembles the linearised operator. With `include_cross = false` the
/// cross-friction contribution is dropped.
pub fn linearized_operator(
    problem: &Problem,
    rho0: &ScalarField,
    nmax: usize,
    include_cross: bool,
) -> Result<LinearizedOperator> {
    if problem.grid.dim() != 1 {
        return Err(Error::InvalidInput("the linearised operator is assembled on 1-D grids only".into()));
    }
    if rho0.values.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidInput("the weighted inner product needs a strictly positive density".into()));
    }
    let cells = problem.grid.len();
    let size = (nmax + 1) * cells;
    let m = self_friction(problem, &rho0.values);
    let mut matrix = DMatrix::zeros(size, size);
    for n in 1..=nmax {
        for i in 0..cells {
            matrix[(n * cells + i, n * cells + i)] = -(n as f64) * (1.0 + m[i]);
        }
    }
    if include_cross && problem.tables.has_z2 && nmax >= 1 {
        let c = cross_friction_matrix(problem);
        for i in 0..cells {
            for j in 0..cells {
                matrix[(cells + i, cells + j)] -= rho0.values[i] * c[(i, j)];
            }
        }
    }
    let w = problem.grid.cell_volume();
    let weight = (0..size).map(|r| factorial(r / cells) * w / rho0.values[r % cells]).collect();
    Ok(LinearizedOperator { nmax, cells, matrix, weight })
}
