//! The flux integral equation and the density-dependent diffusion tensor.
//!
//! The flux `a` solves the second-kind equation
//!
//! ```text
//! a(r) + [int g(r,r') rho(r') Z1(r,r') dr'] a(r) + rho(r) int g(r,r') Z2(r,r') a(r') dr'
//!     = -[grad rho + rho grad U1/kBT + rho int rho(r') g(r,r') grad U2(r,r')/kBT dr']
//! ```
//!
//! discretised by the midpoint rule on the periodic grid. The density then
//! evolves by `d rho / d tau = -D0 div a`.

use std::io::Write;

use nalgebra::{DMatrix, DVector, Matrix3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernels::Tensor;
use crate::model::{gradient, Grid, Point, ScalarField, VectorField};
use crate::problem::Problem;

/// Condition-number limit for the dense solve.
pub const CONDITION_LIMIT: f64 = 1e12;
/// Largest system written by [`FredholmSystem::dump_csv`].
pub const DUMP_LIMIT: usize = 4096;

/// Right-hand side of the flux equation (the drift bracket with a minus sign).
pub fn drift_rhs(problem: &Problem, rho: &ScalarField, _t: f64) -> VectorField {
    let grad_rho = gradient(rho);
    let pair = problem.mean_pair_force(rho);
    let mut out = VectorField::zeros(problem.grid);
    for i in 0..problem.grid.len() {
        let r = rho.values[i];
        out.values[i] = -(grad_rho.values[i] + problem.grad_v1.values[i] * r + pair[i] * r);
    }
    out
}

/// Dense discretisation of the flux operator with its right-hand side.
#[derive(Debug, Clone)]
pub struct FredholmSystem {
    pub grid: Grid,
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
}

/// Per-cell self-friction moments `M_i`, one `d x d` block each.
pub fn self_friction_moments(problem: &Problem, rho: &ScalarField) -> Vec<Tensor> {
    problem.tables.z1_moment(&rho.values)
}

/// Dense operator matrix `I + diag(M) + diag(rho) W (g Z2)` acting on
/// flattened vector fields.
pub fn operator_matrix(problem: &Problem, rho: &ScalarField) -> DMatrix<f64> {
    let grid = problem.grid;
    let n = grid.len();
    let d = grid.dim();
    let w = grid.cell_volume();
    let t = &problem.tables;
    let moments = self_friction_moments(problem, rho);
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let moments = &moments;
            (0..d).map(move |a| {
                let mut row = vec![0.0; n * d];
                row[i * d + a] += 1.0;
                for b in 0..d {
                    row[i * d + b] += moments[i][(a, b)];
                }
                if t.has_z2 {
                    for j in 0..n {
                        let o = t.offset(i, j);
                        let s = rho.values[i] * w * t.g[o];
                        if s != 0.0 {
                            for b in 0..d {
                                row[j * d + b] += s * t.z2[o][(a, b)];
                            }
                        }
                    }
                }
                row
            })
        })
        .collect();
    DMatrix::from_fn(n * d, n * d, |r, c| rows[r][c])
}

pub fn assemble(problem: &Problem, rho: &ScalarField, t: f64) -> FredholmSystem {
    let rhs = drift_rhs(problem, rho, t);
    FredholmSystem {
        grid: problem.grid,
        matrix: operator_matrix(problem, rho),
        rhs: DVector::from_vec(rhs.to_flat()),
    }
}

impl FredholmSystem {
    /// Writes `row, col, value` for the matrix followed by `row, rhs` lines.
    pub fn dump_csv<W: Write>(&self, mut w: W) -> Result<()> {
        if self.rhs.len() > DUMP_LIMIT {
            return Err(Error::InvalidInput(format!(
                "system has {} unknowns; dumps are capped at {DUMP_LIMIT}",
                self.rhs.len()
            )));
        }
        writeln!(w, "kind,row,col,value")?;
        for r in 0..self.matrix.nrows() {
            for c in 0..self.matrix.ncols() {
                let v = self.matrix[(r, c)];
                if v != 0.0 {
                    writeln!(w, "matrix,{r},{c},{v}")?;
                }
            }
        }
        for r in 0..self.rhs.len() {
            writeln!(w, "rhs,{r},0,{}", self.rhs[r])?;
        }
        Ok(())
    }
}

/// Matrix-free application of the flux operator by direct quadrature.
pub fn apply_operator(problem: &Problem, rho: &ScalarField, a: &VectorField) -> VectorField {
    let grid = problem.grid;
    let n = grid.len();
    let w = grid.cell_volume();
    let t = &problem.tables;
    let moments = self_friction_moments(problem, rho);
    let values = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut v = a.values[i] + moments[i] * a.values[i];
            if t.has_z2 {
                let mut acc = Point::zeros();
                for j in 0..n {
                    let o = t.offset(i, j);
                    acc += t.z2[o] * a.values[j] * t.g[o];
                }
                v += acc * (w * rho.values[i]);
            }
            v
        })
        .collect();
    VectorField { grid, values }
}

/// Solution of the flux equation with its relative residual.
#[derive(Debug, Clone)]
pub struct FluxSolution {
    pub a: VectorField,
    pub residual: f64,
}

fn relative_residual(problem: &Problem, rho: &ScalarField, a: &VectorField, rhs: &VectorField) -> f64 {
    let ka = apply_operator(problem, rho, a);
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for (k, b) in ka.values.iter().zip(&rhs.values) {
        num = num.max((k - b).amax());
        den = den.max(b.amax());
    }
    if den > 0.0 {
        num / den
    } else {
        num
    }
}

fn active_block(t: &Tensor, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |a, b| t[(a, b)])
}

/// Hager's estimate of the 1-norm condition number from LU factors of `A` and `A^T`.
pub fn condition_estimate(m: &DMatrix<f64>) -> Option<f64> {
    let n = m.nrows();
    let lu = m.clone().lu();
    let lut = m.transpose().lu();
    let norm1 = (0..n).map(|c| m.column(c).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let mut x = DVector::from_element(n, 1.0 / n as f64);
    let mut est = 0.0;
    for _ in 0..5 {
        let y = lu.solve(&x)?;
        est = y.iter().map(|v| v.abs()).sum::<f64>();
        let xi = y.map(|v| if v >= 0.0 { 1.0 } else { -1.0 });
        let z = lut.solve(&xi)?;
        let (jmax, zmax) = z.iter().enumerate().fold((0, 0.0f64), |acc, (j, v)| {
            if v.abs() > acc.1 {
                (j, v.abs())
            } else {
                acc
            }
        });
        if zmax <= z.dot(&x) {
            break;
        }
        x = DVector::zeros(n);
        x[jmax] = 1.0;
    }
    Some(norm1 * est)
}

/// Solves the flux equation for an arbitrary right-hand side with the
/// operator built from `rho`. Uses the cheapest exact path the kernels allow:
/// identity, per-cell blocks, or a dense LU.
pub fn solve_with_rhs(problem: &Problem, rho: &ScalarField, rhs: &VectorField) -> Result<FluxSolution> {
    let grid = problem.grid;
    let d = grid.dim();
    let t = &problem.tables;
    if !t.has_z1 && !t.has_z2 {
        return Ok(FluxSolution { a: rhs.clone(), residual: 0.0 });
    }
    if !t.has_z2 {
        let moments = self_friction_moments(problem, rho);
        let mut a = VectorField::zeros(grid);
        for (i, m) in moments.iter().enumerate() {
            let block = active_block(&(Matrix3::identity() + m), d);
            let lu = block.lu();
            let b = DVector::from_column_slice(&rhs.values[i].as_slice()[..d]);
            let x = lu.solve(&b).ok_or(Error::SingularCell { cell: i })?;
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::SingularCell { cell: i });
            }
            a.values[i].as_mut_slice()[..d].copy_from_slice(x.as_slice());
        }
        let residual = relative_residual(problem, rho, &a, rhs);
        return Ok(FluxSolution { a, residual });
    }
    let m = operator_matrix(problem, rho);
    let cond = condition_estimate(&m).ok_or(Error::Singular)?;
    if !(cond <= CONDITION_LIMIT) {
        return Err(Error::IllConditioned { condition: cond, limit: CONDITION_LIMIT });
    }
    let b = DVector::from_vec(rhs.to_flat());
    let x = m.lu().solve(&b).ok_or(Error::Singular)?;
    let a = VectorField::from_flat(grid, x.as_slice())?;
    let residual = relative_residual(problem, rho, &a, rhs);
    Ok(FluxSolution { a, residual })
}

/// Direct solve of the flux equation for the density `rho`.
pub fn solve_a(problem: &Problem, rho: &ScalarField, t: f64) -> Result<FluxSolution> {
    let rhs = drift_rhs(problem, rho, t);
    solve_with_rhs(problem, rho, &rhs)
}

/// Neumann-series path: `a <- rhs - (K - I) a`. Errors if the iteration stops
/// contracting.
pub fn solve_a_fixed_point(
    problem: &Problem,
    rho: &ScalarField,
    t: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(VectorField, usize)> {
    let rhs = drift_rhs(problem, rho, t);
    let scale = rhs.linf_norm().max(f64::MIN_POSITIVE);
    let mut a = rhs.clone();
    let mut last_change = f64::INFINITY;
    for it in 1..=max_iter {
        let ka = apply_operator(problem, rho, &a);
        let mut next = rhs.clone();
        for ((nv, kv), av) in next.values.iter_mut().zip(&ka.values).zip(&a.values) {
            *nv -= kv - av;
        }
        let change = next
            .values
            .iter()
            .zip(&a.values)
            .map(|(x, y)| (x - y).amax())
            .fold(0.0, f64::max)
            / scale;
        a = next;
        if change <= tol {
            return Ok((a, it));
        }
        if it > 3 && change > last_change {
            return Err(Error::NonContractive { ratio: change / last_change });
        }
        last_change = change;
    }
    Err(Error::NonContractive { ratio: 1.0 })
}

/// Per-cell `d x d` diffusion tensor.
#[derive(Debug, Clone)]
pub struct DiffusionTensorField {
    pub grid: Grid,
    pub tensors: Vec<Tensor>,
}

impl DiffusionTensorField {
    fn block(&self, i: usize) -> DMatrix<f64> {
        active_block(&self.tensors[i], self.grid.dim())
    }

    /// Smallest eigenvalue of the symmetric part, over all cells.
    pub fn min_eigenvalue(&self) -> f64 {
        (0..self.tensors.len())
            .map(|i| {
                let b = self.block(i);
                let s = (&b + b.transpose()) * 0.5;
                s.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min)
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_eigenvalue(&self) -> f64 {
        (0..self.tensors.len())
            .map(|i| {
                let b = self.block(i);
                let s = (&b + b.transpose()) * 0.5;
                s.symmetric_eigenvalues().iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_asymmetry(&self) -> f64 {
        self.tensors.iter().map(|t| (t - t.transpose()).amax()).fold(0.0, f64::max)
    }
}

/// Exact and first-order diffusion tensors for `Z2 = 0`.
#[derive(Debug, Clone)]
pub struct DiffusionTensors {
    pub exact: DiffusionTensorField,
    pub first_order: DiffusionTensorField,
}

/// `D = D0 [I + M]^{-1}` per cell, together with the two-body approximation
/// `D0 [I - M]`. Only defined when the cross friction kernel vanishes.
pub fn diffusion_tensor(problem: &Problem, rho: &ScalarField) -> Result<DiffusionTensors> {
    if problem.tables.has_z2 {
        return Err(Error::InvalidInput(
            "the closed-form diffusion tensor requires the cross friction kernel z2 to vanish".into(),
        ));
    }
    let d = problem.grid.dim();
    let d0 = problem.d0();
    let moments = self_friction_moments(problem, rho);
    let mut exact = Vec::with_capacity(moments.len());
    let mut first = Vec::with_capacity(moments.len());
    for (i, m) in moments.iter().enumerate() {
        let block = active_block(&(Matrix3::identity() + m), d);
        let inv = block.try_inverse().ok_or(Error::SingularCell { cell: i })?;
        if inv.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularCell { cell: i });
        }
        let mut e = Tensor::zeros();
        let mut f = Tensor::zeros();
        for a in 0..d {
            for b in 0..d {
                e[(a, b)] = d0 * inv[(a, b)];
                f[(a, b)] = d0 * (if a == b { 1.0 } else { 0.0 } - m[(a, b)]);
            }
        }
        exact.push(e);
        first.push(f);
    }
    Ok(DiffusionTensors {
        exact: DiffusionTensorField { grid: problem.grid, tensors: exact },
        first_order: DiffusionTensorField { grid: problem.grid, tensors: first },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{ExternalPotential, FrictionKernel, KernelSet, PairCorrelation, PairPotential};
    use crate::model::PhysicalParams;

    fn params() -> PhysicalParams {
        PhysicalParams::new(1.0, 1.0, 2.0, 1).unwrap()
    }

    fn interacting(grid: Grid) -> Problem {
        let kernels = KernelSet {
            dim: 1,
            v1: ExternalPotential::Cosine { amplitude: 0.8, mode: 1.0, phase: 0.0, period: grid.lengths()[0] },
            v2: PairPotential::GaussianCore { amplitude: 1.0, sigma: 0.4, cutoff: 1.6 },
            g: PairCorrelation::StepExclusion { sigma: 0.2 },
            z1: FrictionKernel::Isotropic { amplitude: 0.2, width: 0.5, cutoff: 2.0 },
            z2: FrictionKernel::Isotropic { amplitude: 0.1, width: 0.5, cutoff: 2.0 },
        };
        Problem::new(grid, kernels, params()).unwrap()
    }

    fn bumpy(grid: Grid) -> ScalarField {
        let l = grid.lengths()[0];
        ScalarField::from_fn(grid, |p| 1.0 + 0.5 * (2.0 * std::f64::consts::PI * p[0] / l).sin() + 0.2 * (6.0 * p[0] / l).cos().powi(2))
    }

    #[test]
    fn identity_without_friction() {
        let g = Grid::uniform_1d(8.0, 8).unwrap();
        let p = Problem::new(g, KernelSet::free(1), params()).unwrap();
        let rho = bumpy(g);
        let sys = assemble(&p, &rho, 0.0);
        assert_eq!(sys.matrix, DMatrix::identity(8, 8));
        let sol = solve_a(&p, &rho, 0.0).unwrap();
        assert_eq!(sol.a, drift_rhs(&p, &rho, 0.0));
    }

    #[test]
    fn uniform_free_has_zero_drift() {
        let g = Grid::uniform_1d(8.0, 16).unwrap();
        let p = Problem::new(g, KernelSet::free(1), params()).unwrap();
        let d = drift_rhs(&p, &ScalarField::constant(g, 2.0), 0.0);
        assert!(d.linf_norm() == 0.0);
    }

    #[test]
    fn z1_only_matrix_is_diagonal_and_matches_loop() {
        let g = Grid::uniform_1d(8.0, 8).unwrap();
        let z = FrictionKernel::Isotropic { amplitude: 0.3, width: 1.0, cutoff: 3.5 };
        let kernels = KernelSet { z1: z.clone(), g: PairCorrelation::StepExclusion { sigma: 1.5 }, ..KernelSet::free(1) };
        let p = Problem::new(g, kernels.clone(), params()).unwrap();
        let rho = bumpy(g);
        let m = operator_matrix(&p, &rho);
        for i in 0..8 {
            let mut expected = 1.0;
            for j in 0..8 {
                let dx = g.minimum_image(g.cell_center(i) - g.cell_center(j));
                expected += g.cell_volume() * kernels.g.value(&dx) * rho.values[j] * z.envelope(dx.norm());
            }
            assert!((m[(i, i)] - expected).abs() < 1e-14);
            for j in 0..8 {
                if j != i {
                    assert_eq!(m[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn delta_density_convolution() {
        let g = Grid::uniform_1d(8.0, 32).unwrap();
        let kernels = KernelSet { v2: PairPotential::GaussianCore { amplitude: 1.0, sigma: 0.5, cutoff: 2.5 }, ..KernelSet::free(1) };
        let p = Problem::new(g, kernels.clone(), params()).unwrap();
        let peak = 10;
        let mut rho = ScalarField::zeros(g);
        rho.values[peak] = 4.0;
        rho.values[12] = 1.5;
        let f = p.mean_pair_force(&rho);
        let i = 12;
        let dx = g.minimum_image(g.cell_center(i) - g.cell_center(peak));
        let expected = 4.0 * kernels.v2.gradient(&dx)[0] * g.cell_volume()
            + 1.5 * kernels.v2.gradient(&Point::zeros())[0] * g.cell_volume();
        assert!((f[i][0] - expected).abs() < 1e-15);
        let drift = drift_rhs(&p, &rho, 0.0);
        let grad = gradient(&rho);
        assert!((drift.values[i][0] + grad.values[i][0] + 1.5 * expected).abs() < 1e-14);
    }

    #[test]
    fn matvec_matches_direct_operator() {
        let g = Grid::uniform_1d(8.0, 8).unwrap();
        let p = interacting(g);
        let rho = bumpy(g);
        let m = operator_matrix(&p, &rho);
        for s in 0..5 {
            let v = VectorField::from_fn(g, |x| Point::new((x[0] * (s as f64 + 1.3)).sin(), 0.0, 0.0));
            let mv = &m * DVector::from_vec(v.to_flat());
            let direct = apply_operator(&p, &rho, &v);
            for i in 0..8 {
                assert!((mv[i] - direct.values[i][0]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn direct_solve_matches_explicit_inverse() {
        let g = Grid::uniform_1d(8.0, 8).unwrap();
        let p = interacting(g);
        let rho = bumpy(g);
        let sol = solve_a(&p, &rho, 0.0).unwrap();
        let sys = assemble(&p, &rho, 0.0);
        let x = sys.matrix.clone().try_inverse().unwrap() * &sys.rhs;
        for i in 0..8 {
            assert!((sol.a.values[i][0] - x[i]).abs() < 1e-12);
        }
        assert!(sol.residual < 1e-10);
        let (fp, _) = solve_a_fixed_point(&p, &rho, 0.0, 1e-14, 500).unwrap();
        for i in 0..8 {
            assert!((fp.values[i][0] - x[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn boltzmann_density_gives_zero_flux() {
        let g = Grid::uniform_1d(8.0, 64).unwrap();
        let mut p = interacting(g);
        p = p.with_kernels(KernelSet { v2: PairPotential::Free, ..p.kernels.clone() }).unwrap();
        let rho = p.boltzmann_density(5.0);
        let sol = solve_a(&p, &rho, 0.0).unwrap();
        assert!(sol.a.l2_norm() <= 1e-10 * rho.l2_norm());
    }

    #[test]
    fn non_contractive_kernel_reported() {
        let g = Grid::uniform_1d(8.0, 16).unwrap();
        let kernels = KernelSet {
            z2: FrictionKernel::Isotropic { amplitude: 0.9, width: 1.0, cutoff: 3.5 },
            ..KernelSet::free(1)
        };
        let p = Problem::new(g, kernels, params()).unwrap();
        let rho = ScalarField::from_fn(g, |x| 3.0 + (x[0]).sin());
        assert!(matches!(solve_a_fixed_point(&p, &rho, 0.0, 1e-12, 200), Err(Error::NonContractive { .. })));
        // The direct path still answers.
        assert!(solve_a(&p, &rho, 0.0).unwrap().residual < 1e-10);
    }

    #[test]
    fn scalar_diffusion_tensor() {
        // One cell sees int g rho z = 0.25 when rho is uniform and the kernel is a constant.
        let g = Grid::uniform_1d(8.0, 16).unwrap();
        let kernels = KernelSet { z1: FrictionKernel::Isotropic { amplitude: 1.0, width: 1.0, cutoff: 3.5 }, ..KernelSet::free(1) };
        let p = Problem::new(g, kernels, params()).unwrap();
        let unit = ScalarField::constant(g, 1.0);
        let m0 = self_friction_moments(&p, &unit)[0][(0, 0)];
        let rho = ScalarField::constant(g, 0.25 / m0);
        let dt = diffusion_tensor(&p, &rho).unwrap();
        let d0 = p.d0();
        assert!((dt.exact.tensors[3][(0, 0)] - d0 / 1.25).abs() < 1e-14);
        assert!((dt.first_order.tensors[3][(0, 0)] - 0.75 * d0).abs() < 1e-14);
        assert!((dt.exact.tensors[3][(0, 0)] - dt.first_order.tensors[3][(0, 0)] - 0.05 * d0).abs() < 1e-14);
    }

    #[test]
    fn diffusion_tensor_without_friction_is_d0() {
        let g = Grid::new(&[4.0, 4.0], &[6, 6]).unwrap();
        let p = Problem::new(g, KernelSet::free(2), params()).unwrap();
        let dt = diffusion_tensor(&p, &ScalarField::constant(g, 1.0)).unwrap();
        for t in &dt.exact.tensors {
            assert_eq!(t[(0, 0)], p.d0());
            assert_eq!(t[(1, 1)], p.d0());
            assert_eq!(t[(0, 1)], 0.0);
        }
    }

    #[test]
    fn diffusion_tensor_rejects_cross_friction() {
        let g = Grid::uniform_1d(8.0, 8).unwrap();
        let p = interacting(g);
        assert!(diffusion_tensor(&p, &bumpy(g)).is_err());
    }

    #[test]
    fn dump_is_capped() {
        let g = Grid::uniform_1d(8.0, 8).unwrap();
        let p = interacting(g);
        let sys = assemble(&p, &bumpy(g), 0.0);
        let mut buf = Vec::new();
        sys.dump_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("kind,row,col,value\n"));
    }
}
