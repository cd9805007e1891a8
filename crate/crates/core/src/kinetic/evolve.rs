//! IMEX time stepping of the phase-space equation
//! `df/dt = eps^-1 [L1 f + N1(f,f)] + eps^-2 [L0 f + N0(f,f)]`.
//!
//! The stiff part is implicit in the ARS(2,2,2) scheme. Its stage equation is
//! solved exactly: degree 0 is untouched by the collision operator, so the
//! self-friction moment is known, degree 1 is linear given degree 0, and each
//! higher degree is a diagonal solve given the degree below.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::field::{HermiteField, KineticParams};
use super::hermite::GaussHermite;
use super::operators::{cross_friction, cross_friction_matrix, self_friction, transport};
use crate::error::{Error, Result};
use crate::problem::Problem;

/// Tail ratio `||gamma_nmax|| / ||gamma_0||` above which truncation is flagged.
pub const TAIL_WARNING: f64 = 1e-3;

/// Problem plus the cached cross-friction matrix.
pub struct KineticSolver<'a> {
    pub problem: &'a Problem,
    pub params: KineticParams,
    cross: Option<DMatrix<f64>>,
}

impl<'a> KineticSolver<'a> {
    pub fn new(problem: &'a Problem, params: KineticParams) -> Result<Self> {
        params.validate()?;
        if problem.grid.dim() != 1 {
            return Err(Error::InvalidInput("the kinetic solver works on 1-D grids only".into()));
        }
        let cross = problem.tables.has_z2.then(|| cross_friction_matrix(problem));
        Ok(Self { problem, params, cross })
    }

    /// Default step: resolves the transport CFL at speed `sqrt(nmax + 1) / eps`
    /// and the limiting diffusion.
    pub fn auto_dt(&self) -> f64 {
        let h = self.problem.grid.min_spacing();
        let eps = self.params.epsilon;
        0.5 * (eps * h / ((self.params.nmax + 1) as f64).sqrt()).min(h * h)
    }

    pub fn dt(&self) -> f64 {
        self.params.dt.unwrap_or_else(|| self.auto_dt())
    }

    /// Solves `Y - theta (L0 Y + N0(Y, Y)) = R` exactly.
    pub fn solve_stiff(&self, r: &HermiteField, theta: f64) -> Result<HermiteField> {
        let p = self.problem;
        let n = p.grid.len();
        let nmax = r.nmax();
        let mut y = HermiteField::zeros(r.grid, nmax);
        y.coeffs[0].clone_from(&r.coeffs[0]);
        if nmax == 0 {
            return Ok(y);
        }
        let m = if p.tables.has_z1 { self_friction(p, &y.coeffs[0]) } else { vec![0.0; n] };
        match &self.cross {
            Some(c) => {
                let rho = &y.coeffs[0];
                let a = DMatrix::from_fn(n, n, |i, j| {
                    let diag = if i == j { 1.0 + theta * (1.0 + m[i]) } else { 0.0 };
                    diag + theta * rho[i] * c[(i, j)]
                });
                let sol = a
                    .lu()
                    .solve(&DVector::from_column_slice(&r.coeffs[1]))
                    .ok_or(Error::Singular)?;
                y.coeffs[1] = sol.as_slice().to_vec();
            }
            None => {
                for i in 0..n {
                    y.coeffs[1][i] = r.coeffs[1][i] / (1.0 + theta * (1.0 + m[i]));
                }
            }
        }
        let c = if self.cross.is_some() { cross_friction(p, &y.coeffs[1]) } else { vec![0.0; n] };
        for k in 2..=nmax {
            for i in 0..n {
                let rhs = r.coeffs[k][i] - theta * c[i] * y.coeffs[k - 1][i];
                y.coeffs[k][i] = rhs / (1.0 + theta * k as f64 * (1.0 + m[i]));
            }
        }
        Ok(y)
    }

    /// One ARS(2,2,2) step from `f` at time `t`.
    pub fn step(&self, f: &HermiteField, dt: f64) -> Result<HermiteField> {
        let eps = self.params.epsilon;
        let g = 1.0 - std::f64::consts::FRAC_1_SQRT_2;
        let delta = 1.0 - 1.0 / (2.0 * g);
        let theta = dt * g / (eps * eps);

        let e1 = transport(self.problem, f).scaled(1.0 / eps);
        let mut r2 = f.clone();
        r2.axpy(dt * g, &e1);
        let y2 = self.solve_stiff(&r2, theta)?;
        // Stiff stage derivative recovered from the stage equation.
        let mut s2 = y2.clone();
        s2.axpy(-1.0, &r2);
        let s2 = s2.scaled(1.0 / (dt * g));

        let e2 = transport(self.problem, &y2).scaled(1.0 / eps);
        let mut r3 = f.clone();
        r3.axpy(dt * delta, &e1);
        r3.axpy(dt * (1.0 - delta), &e2);
        r3.axpy(dt * (1.0 - g), &s2);
        self.solve_stiff(&r3, theta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KineticSummaryRow {
    pub t: f64,
    pub mass: f64,
    pub min_rho: f64,
    pub tail_norm: f64,
}

#[derive(Debug, Clone)]
pub struct KineticTrajectory {
    pub snapshots: Vec<(f64, HermiteField)>,
    pub summary: Vec<KineticSummaryRow>,
    pub final_field: HermiteField,
    pub t_final: f64,
    pub dt: f64,
    pub steps: usize,
    /// Largest `||gamma_nmax|| / ||gamma_0||` seen.
    pub max_tail_ratio: f64,
    pub tail_warning: bool,
    /// Smallest reconstructed `f / phi` at the stored snapshots.
    pub min_reconstruction: f64,
}

/// Evolves `f_init` to rescaled time `t_final`, storing a snapshot every
/// `snapshot_every` steps (0 keeps the endpoints only).
pub fn evolve_kinetic(
    problem: &Problem,
    f_init: &HermiteField,
    params: &KineticParams,
    t_final: f64,
    snapshot_every: usize,
) -> Result<KineticTrajectory> {
    f_init.check_grid()?;
    if f_init.nmax() != params.nmax {
        return Err(Error::InvalidInput(format!(
            "initial field has nmax {} but the parameters ask for {}",
            f_init.nmax(),
            params.nmax
        )));
    }
    if f_init.coeffs[0].iter().any(|v| *v < 0.0) {
        return Err(Error::InvalidInput("initial density must be non-negative".into()));
    }
    if !(t_final >= 0.0) {
        return Err(Error::InvalidInput("t_final must be non-negative".into()));
    }
    let solver = KineticSolver::new(problem, *params)?;
    let quad = GaussHermite::new(params.quad_nodes);
    let nominal = solver.dt();
    let n_steps = if t_final == 0.0 { 0 } else { ((t_final / nominal) * (1.0 - 1e-12)).ceil() as usize };
    let dt = if n_steps == 0 { 0.0 } else { t_final / n_steps as f64 };
    let mut f = f_init.clone();
    let mut snapshots = vec![(0.0, f.clone())];
    let row = |t: f64, f: &HermiteField| KineticSummaryRow {
        t,
        mass: f.mass(),
        min_rho: f.coeffs[0].iter().cloned().fold(f64::INFINITY, f64::min),
        tail_norm: f.tail_norm(),
    };
    let mut summary = vec![row(0.0, &f)];
    let mut max_tail_ratio = 0.0f64;
    let mut min_reconstruction = f.min_reconstruction(&quad);
    for k in 1..=n_steps {
        f = solver.step(&f, dt)?;
        let t = k as f64 * dt;
        if !f.is_finite() {
            return Err(Error::NumericalAbort { time: t, reason: "non-finite Hermite coefficient".into() });
        }
        let norms = f.degree_norms();
        if norms[0] > 0.0 {
            max_tail_ratio = max_tail_ratio.max(norms[params.nmax] / norms[0]);
        }
        if snapshot_every > 0 && k % snapshot_every == 0 && k < n_steps {
            min_reconstruction = min_reconstruction.min(f.min_reconstruction(&quad));
            snapshots.push((t, f.clone()));
            summary.push(row(t, &f));
        }
    }
    if n_steps > 0 {
        min_reconstruction = min_reconstruction.min(f.min_reconstruction(&quad));
        snapshots.push((t_final, f.clone()));
        summary.push(row(t_final, &f));
    }
    Ok(KineticTrajectory {
        snapshots,
        summary,
        final_field: f,
        t_final,
        dt,
        steps: n_steps,
        max_tail_ratio,
        tail_warning: max_tail_ratio > TAIL_WARNING,
        min_reconstruction,
    })
}
