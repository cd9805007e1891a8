//! Evolution of the first density correction `psi`, driven by a given
//! density/flux trajectory.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fredholm::{solve_a, solve_with_rhs};
use crate::model::{divergence, gradient, Point, ScalarField, VectorField};
use crate::problem::Problem;

/// Source field of the second-order flux equation for the correction `psi`
/// about the density `rho0` with flux `a`.
pub fn psi_source(problem: &Problem, psi: &ScalarField, rho0: &ScalarField, a: &VectorField) -> VectorField {
    let grid = problem.grid;
    let n = grid.len();
    let t = &problem.tables;
    let w = grid.cell_volume();
    let grad = gradient(psi);
    let f_rho = problem.mean_pair_force(rho0);
    let f_psi = problem.mean_pair_force(psi);
    let m_psi = t.z1_moment(&psi.values);
    let values = (0..n)
        .map(|i| {
            let p = psi.values[i];
            let mut v = grad.values[i] + problem.grad_v1.values[i] * p + f_rho[i] * p + f_psi[i] * rho0.values[i];
            v += m_psi[i] * a.values[i];
            if t.has_z2 && p != 0.0 {
                let mut acc = Point::zeros();
                for j in 0..n {
                    let o = t.offset(i, j);
                    acc += t.z2[o] * a.values[j] * t.g[o];
                }
                v += acc * (w * p);
            }
            v
        })
        .collect();
    VectorField { grid, values }
}

/// `-D0 div a2` where `a2` solves the flux equation at `rho0` with the
/// negated source.
fn psi_rate(problem: &Problem, psi: &ScalarField, rho0: &ScalarField, a: &VectorField) -> Result<ScalarField> {
    let mut src = psi_source(problem, psi, rho0, a);
    for v in src.values.iter_mut() {
        *v = -*v;
    }
    let a2 = solve_with_rhs(problem, rho0, &src)?.a;
    let mut r = divergence(&a2);
    r.scale(-problem.d0());
    Ok(r)
}

#[derive(Debug, Clone)]
pub struct PsiTrajectory {
    pub times: Vec<f64>,
    pub psi: Vec<ScalarField>,
    pub max_abs: Vec<f64>,
    pub integral: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsiSummary {
    pub max_abs: f64,
    pub integral_drift: f64,
}

impl PsiTrajectory {
    pub fn summary(&self) -> PsiSummary {
        let i0 = self.integral.first().copied().unwrap_or(0.0);
        PsiSummary {
            max_abs: self.max_abs.iter().cloned().fold(0.0, f64::max),
            integral_drift: self.integral.iter().map(|v| (v - i0).abs()).fold(0.0, f64::max),
        }
    }
}

/// Heun steps of `d psi / d tau = -D0 div a2` between consecutive entries of a
/// density trajectory (for instance every step of a Smoluchowski run).
pub fn psi_evolution(problem: &Problem, psi0: &ScalarField, rho_traj: &[(f64, ScalarField)]) -> Result<PsiTrajectory> {
    if rho_traj.is_empty() {
        return Err(Error::InvalidInput("the density trajectory is empty".into()));
    }
    let mut psi = psi0.clone();
    let mut out = PsiTrajectory {
        times: vec![rho_traj[0].0],
        max_abs: vec![psi.linf_norm()],
        integral: vec![psi.integrate()],
        psi: vec![psi.clone()],
    };
    let mut a_prev = solve_a(problem, &rho_traj[0].1, rho_traj[0].0)?.a;
    for win in rho_traj.windows(2) {
        let (ta, rho_a) = (&win[0].0, &win[0].1);
        let (tb, rho_b) = (&win[1].0, &win[1].1);
        let dt = tb - ta;
        let a_next = solve_a(problem, rho_b, *tb)?.a;
        let k1 = psi_rate(problem, &psi, rho_a, &a_prev)?;
        let mut stage = psi.clone();
        stage.axpy(dt, &k1);
        let k2 = psi_rate(problem, &stage, rho_b, &a_next)?;
        for ((p, x), y) in psi.values.iter_mut().zip(&k1.values).zip(&k2.values) {
            *p += 0.5 * dt * (x + y);
        }
        if psi.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalAbort { time: *tb, reason: "non-finite psi".into() });
        }
        out.times.push(*tb);
        out.max_abs.push(psi.linf_norm());
        out.integral.push(psi.integrate());
        out.psi.push(psi.clone());
        a_prev = a_next;
    }
    Ok(out)
}
