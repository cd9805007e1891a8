//! Actions of the phase-space operators on Hermite coefficients.
//!
//! With `f = phi(p) sum gamma_n He_n(p)` the identities
//! `p He_n = He_{n+1} + n He_{n-1}` and `d/dp (phi He_n) = -phi He_{n+1}`
//! turn every operator into a short band in the degree index. Output at
//! degree `nmax + 1` is truncated.

use nalgebra::DMatrix;

use super::field::HermiteField;
use crate::model::central_difference;
use crate::problem::Problem;

/// `M(x_i) = sum_j w g_ij rho_j z1_ij`.
pub fn self_friction(problem: &Problem, rho: &[f64]) -> Vec<f64> {
    problem.tables.z1_moment(rho).into_iter().map(|m| m[(0, 0)]).collect()
}

/// `c(x_i) = sum_j w g_ij z2_ij j_j` for a momentum density `j`.
pub fn cross_friction(problem: &Problem, momentum: &[f64]) -> Vec<f64> {
    let t = &problem.tables;
    let n = problem.grid.len();
    if !t.has_z2 {
        return vec![0.0; n];
    }
    let w = problem.grid.cell_volume();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let o = t.offset(i, j);
                    t.g[o] * t.z2[o][(0, 0)] * momentum[j]
                })
                .sum::<f64>()
                * w
        })
        .collect()
}

/// Matrix of [`cross_friction`], `C_ij = w g_ij z2_ij`.
pub fn cross_friction_matrix(problem: &Problem) -> DMatrix<f64> {
    let t = &problem.tables;
    let n = problem.grid.len();
    let w = problem.grid.cell_volume();
    DMatrix::from_fn(n, n, |i, j| {
        let o = t.offset(i, j);
        w * t.g[o] * t.z2[o][(0, 0)]
    })
}

/// Mean pair force over `kBT`, `F(x_i) = sum_j w rho_j g_ij dV2_ij / kBT`.
pub fn pair_force(problem: &Problem, rho: &[f64]) -> Vec<f64> {
    if !problem.tables.has_v2 {
        return vec![0.0; rho.len()];
    }
    let inv = 1.0 / problem.params.kbt;
    problem.tables.mean_pair_gradient(rho).into_iter().map(|f| f[0] * inv).collect()
}

/// `L0 = d/dp (p + d/dp)`: `gamma_n -> -n gamma_n`.
pub fn apply_l0(f: &HermiteField) -> HermiteField {
    let mut out = f.clone();
    for (n, c) in out.coeffs.iter_mut().enumerate() {
        for v in c.iter_mut() {
            *v *= -(n as f64);
        }
    }
    out
}

/// `L1 = -p d/dx + V1' d/dp` with `V1 = U1 / kBT`.
pub fn apply_l1(problem: &Problem, f: &HermiteField) -> HermiteField {
    let grid = f.grid;
    let nmax = f.nmax();
    let mut out = HermiteField::zeros(grid, nmax);
    let dv: Vec<f64> = problem.grad_v1.values.iter().map(|g| g[0]).collect();
    let derivs: Vec<Vec<f64>> = f.coeffs.iter().map(|c| central_difference(&grid, c, 0)).collect();
    for k in 0..=nmax {
        let o = &mut out.coeffs[k];
        if k >= 1 {
            let (d, g) = (&derivs[k - 1], &f.coeffs[k - 1]);
            for i in 0..grid.len() {
                o[i] -= d[i] + dv[i] * g[i];
            }
        }
        if k < nmax {
            let d = &derivs[k + 1];
            let s = (k + 1) as f64;
            for i in 0..grid.len() {
                o[i] -= s * d[i];
            }
        }
    }
    out
}

/// Friction nonlinearity `N0(f, ft)`, the first argument being the one
/// integrated against the kernels: `M[f] L0 ft + d/dp (c[f] ft)`.
pub fn apply_n0(problem: &Problem, f: &HermiteField, ft: &HermiteField) -> HermiteField {
    let nmax = ft.nmax();
    let mut out = HermiteField::zeros(ft.grid, nmax);
    if problem.tables.has_z1 {
        let m = self_friction(problem, &f.coeffs[0]);
        for n in 1..=nmax {
            for (i, o) in out.coeffs[n].iter_mut().enumerate() {
                *o -= n as f64 * m[i] * ft.coeffs[n][i];
            }
        }
    }
    if problem.tables.has_z2 && f.nmax() >= 1 {
        let c = cross_friction(problem, &f.coeffs[1]);
        shift_up(&mut out, ft, &c);
    }
    out
}

/// Mean-force nonlinearity `N1(f, ft) = F[f] d/dp ft`.
pub fn apply_n1(problem: &Problem, f: &HermiteField, ft: &HermiteField) -> HermiteField {
    let mut out = HermiteField::zeros(ft.grid, ft.nmax());
    if problem.tables.has_v2 {
        let force = pair_force(problem, &f.coeffs[0]);
        shift_up(&mut out, ft, &force);
    }
    out
}

/// `out_{n+1} -= s * ft_n`, the action of `d/dp (s ft)`.
fn shift_up(out: &mut HermiteField, ft: &HermiteField, s: &[f64]) {
    let nmax = out.nmax();
    for n in 0..nmax {
        for i in 0..s.len() {
            out.coeffs[n + 1][i] -= s[i] * ft.coeffs[n][i];
        }
    }
}

/// Non-stiff part `L1 f + N1(f, f)` (without the `1/epsilon` factor).
pub fn transport(problem: &Problem, f: &HermiteField) -> HermiteField {
    let mut out = apply_l1(problem, f);
    out.axpy(1.0, &apply_n1(problem, f, f));
    out
}

/// Stiff part `L0 f + N0(f, f)` (without the `1/epsilon^2` factor).
pub fn collision(problem: &Problem, f: &HermiteField) -> HermiteField {
    let mut out = apply_l0(f);
    out.axpy(1.0, &apply_n0(problem, f, f));
    out
}

/// Full right-hand side `eps^-1 (L1 f + N1) + eps^-2 (L0 f + N0)`.
pub fn kinetic_rhs(problem: &Problem, f: &HermiteField, epsilon: f64) -> HermiteField {
    let mut out = transport(problem, f).scaled(1.0 / epsilon);
    out.axpy(1.0 / (epsilon * epsilon), &collision(problem, f));
    out
}
