use std::io::Write;

use serde::{Deserialize, Serialize};

use super::hermite::GaussHermite;
use crate::error::{Error, Result};
use crate::model::{compensated_sum, Grid, ScalarField};

/// Phase-space density `f(x, p) = Z^{-1} exp(-p^2/2) sum_n gamma_n(x) He_n(p)`
/// on a 1-D grid, with `p` in thermal units.
#[derive(Debug, Clone, PartialEq)]
pub struct HermiteField {
    pub grid: Grid,
    /// `coeffs[n][i]` is `gamma_n` at cell `i`.
    pub coeffs: Vec<Vec<f64>>,
}

impl HermiteField {
    pub fn zeros(grid: Grid, nmax: usize) -> Self {
        Self { grid, coeffs: vec![vec![0.0; grid.len()]; nmax + 1] }
    }

    /// Local Maxwellian with density `rho`.
    pub fn maxwellian(rho: &ScalarField, nmax: usize) -> Self {
        let mut f = Self::zeros(rho.grid, nmax);
        f.coeffs[0].clone_from(&rho.values);
        f
    }

    pub fn nmax(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn degree(&self, n: usize) -> ScalarField {
        ScalarField { grid: self.grid, values: self.coeffs[n].clone() }
    }

    /// Position density, the degree-0 coefficient.
    pub fn rho(&self) -> ScalarField {
        self.degree(0)
    }

    /// Momentum density `int p f dp`, the degree-1 coefficient.
    pub fn momentum(&self) -> ScalarField {
        if self.nmax() >= 1 {
            self.degree(1)
        } else {
            ScalarField::zeros(self.grid)
        }
    }

    pub fn mass(&self) -> f64 {
        compensated_sum(self.coeffs[0].iter().copied()) * self.grid.cell_volume()
    }

    /// Grid L2 norm of each degree.
    pub fn degree_norms(&self) -> Vec<f64> {
        self.coeffs
            .iter()
            .map(|c| (c.iter().map(|v| v * v).sum::<f64>() * self.grid.cell_volume()).sqrt())
            .collect()
    }

    /// `(sum_{n>=2} ||gamma_n||^2)^{1/2}`.
    pub fn tail_norm(&self) -> f64 {
        self.degree_norms().iter().skip(2).map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn axpy(&mut self, a: f64, x: &HermiteField) {
        for (c, xc) in self.coeffs.iter_mut().zip(&x.coeffs) {
            for (v, xv) in c.iter_mut().zip(xc) {
                *v += a * xv;
            }
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        for c in out.coeffs.iter_mut() {
            for v in c.iter_mut() {
                *v *= s;
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().flatten().all(|v| v.is_finite())
    }

    pub fn max_abs_difference(&self, other: &HermiteField) -> f64 {
        self.coeffs
            .iter()
            .flatten()
            .zip(other.coeffs.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Smallest value of `f / phi` over cells and quadrature nodes, the
    /// monitored non-negativity of the reconstruction.
    pub fn min_reconstruction(&self, quad: &GaussHermite) -> f64 {
        let mut m = f64::INFINITY;
        for i in 0..self.grid.len() {
            let c: Vec<f64> = self.coeffs.iter().map(|c| c[i]).collect();
            for v in quad.evaluate(&c) {
                m = m.min(v);
            }
        }
        m
    }

    pub fn check_grid(&self) -> Result<()> {
        if self.grid.dim() != 1 {
            return Err(Error::InvalidInput("the kinetic solver works on 1-D grids only".into()));
        }
        Ok(())
    }

    /// CSV with `x, gamma_0 .. gamma_nmax`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let names: Vec<String> = (0..=self.nmax()).map(|n| format!("gamma_{n}")).collect();
        writeln!(w, "x,{}", names.join(","))?;
        for i in 0..self.grid.len() {
            write!(w, "{}", self.grid.cell_center(i)[0])?;
            for c in &self.coeffs {
                write!(w, ",{}", c[i])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Settings of the kinetic solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KineticParams {
    pub epsilon: f64,
    pub nmax: usize,
    /// Gauss–Hermite nodes for diagnostics and reconstruction.
    pub quad_nodes: usize,
    /// Fixed step in rescaled time; `None` picks one from the grid and `epsilon`.
    pub dt: Option<f64>,
}

impl KineticParams {
    pub fn new(epsilon: f64, nmax: usize) -> Self {
        Self { epsilon, nmax, quad_nodes: 2 * nmax + 2, dt: None }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            errs.push(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if self.nmax < 1 {
            errs.push("nmax must be at least 1".to_string());
        }
        if self.quad_nodes < 2 * self.nmax {
            errs.push(format!("quad_nodes must be at least 2*nmax = {}", 2 * self.nmax));
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0) {
                errs.push(format!("dt must be positive, got {dt}"));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidInput(errs.join("; ")))
        }
    }
}
