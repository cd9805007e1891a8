//! Time stepping of the one-body Smoluchowski equation and the comparison of
//! its three right-hand sides.
//!
//! Every formulation is written as `d rho / d tau = -D0 div J(rho)` for a
//! formulation-specific flux `J`, so each update is conservative by
//! construction.

use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fredholm::{drift_rhs, self_friction_moments, solve_a};
use crate::kernels::{rho2_closure, rho3_closure, FrictionKernel, KernelSet, Tensor};
use crate::model::{divergence, Grid, Point, ScalarField, VectorField};
use crate::problem::Problem;
use crate::stats::{power_law_fit, PowerFit};

/// CFL safety factor in `dt <= c h^2 / (2 d Dmax)`.
pub const CFL_FACTOR: f64 = 0.4;
/// Values below `-NEGATIVITY_TOL * max rho` are floored to zero and counted.
pub const NEGATIVITY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    /// Flux from the full Fredholm solve.
    New,
    /// Two-body approximation `D ~ D0 (I - M)` of the diffusion tensor.
    Expanded,
    /// The alternative route with a three-body closure.
    RexLowen,
}

impl Formulation {
    pub const ALL: [Formulation; 3] = [Formulation::New, Formulation::Expanded, Formulation::RexLowen];

    pub fn name(self) -> &'static str {
        match self {
            Formulation::New => "new",
            Formulation::Expanded => "expanded",
            Formulation::RexLowen => "rex_lowen",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.name() == s)
    }
}

fn require_no_cross_friction(problem: &Problem, what: &str) -> Result<()> {
    if problem.tables.has_z2 {
        return Err(Error::InvalidInput(format!("{what} requires the cross friction kernel z2 to vanish")));
    }
    Ok(())
}

/// `J = -(I - M) B` where `B` is the drift bracket.
pub fn flux_expanded(problem: &Problem, rho: &ScalarField, t: f64) -> Result<VectorField> {
    require_no_cross_friction(problem, "the expanded formulation")?;
    let b = drift_rhs(problem, rho, t);
    let m = self_friction_moments(problem, rho);
    let values = b.values.iter().zip(&m).map(|(bi, mi)| bi - mi * bi).collect();
    Ok(VectorField { grid: problem.grid, values })
}

/// Flux of the three-body formulation with `rho2`, `rho3` from the
/// superposition closures.
pub fn flux_rex_lowen(problem: &Problem, rho: &ScalarField, t: f64) -> Result<VectorField> {
    require_no_cross_friction(problem, "the Rex-Lowen formulation")?;
    let grid = problem.grid;
    let n = grid.len();
    let d = grid.dim();
    let w = grid.cell_volume();
    let tables = &problem.tables;
    let inv_kbt = 1.0 / problem.params.kbt;
    let b = drift_rhs(problem, rho, t);
    if !tables.has_z1 {
        return Ok(b);
    }
    let rho2 = rho2_closure(rho, tables);
    let rho3 = rho3_closure(rho, tables);
    let inv2h: Vec<f64> = (0..d).map(|a| 0.5 / grid.spacing(a)).collect();
    let values = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut corr = Point::zeros();
            for j in 0..n {
                let oij = tables.offset(i, j);
                let z = &tables.z1[oij];
                if z.iter().all(|v| *v == 0.0) {
                    continue;
                }
                let mut grad_r = Point::zeros();
                for a in 0..d {
                    let ip = grid.neighbor(i, a, 1);
                    let im = grid.neighbor(i, a, -1);
                    grad_r[a] = (rho2.eval(ip, j) - rho2.eval(im, j)) * inv2h[a];
                }
                let r2 = rho2.eval(i, j);
                let mut inner = grad_r + (problem.grad_v1.values[i] + tables.grad_v2[oij] * inv_kbt) * r2;
                if tables.has_v2 && r2 != 0.0 {
                    let mut three = Point::zeros();
                    for k in 0..n {
                        let oik = tables.offset(i, k);
                        three += tables.grad_v2[oik] * rho3.eval(i, j, k);
                    }
                    inner += three * (w * inv_kbt);
                }
                corr += z * inner * w;
            }
            b.values[i] + corr
        })
        .collect();
    Ok(VectorField { grid, values })
}

/// Flux `J` of the chosen formulation.
pub fn flux(problem: &Problem, rho: &ScalarField, t: f64, form: Formulation) -> Result<VectorField> {
    match form {
        Formulation::New => Ok(solve_a(problem, rho, t)?.a),
        Formulation::Expanded => flux_expanded(problem, rho, t),
        Formulation::RexLowen => flux_rex_lowen(problem, rho, t),
    }
}

fn rhs_from_flux(problem: &Problem, j: &VectorField) -> ScalarField {
    let mut r = divergence(j);
    r.scale(-problem.d0());
    r
}

/// `-D0 div a` with `a` from the Fredholm solve.
pub fn rhs_new(problem: &Problem, rho: &ScalarField, t: f64) -> Result<ScalarField> {
    rhs(problem, rho, t, Formulation::New)
}

/// `D0 div[(I - M) B]`.
pub fn rhs_new_expanded(problem: &Problem, rho: &ScalarField, t: f64) -> Result<ScalarField> {
    rhs(problem, rho, t, Formulation::Expanded)
}

pub fn rhs_rex_lowen(problem: &Problem, rho: &ScalarField, t: f64) -> Result<ScalarField> {
    rhs(problem, rho, t, Formulation::RexLowen)
}

pub fn rhs(problem: &Problem, rho: &ScalarField, t: f64, form: Formulation) -> Result<ScalarField> {
    Ok(rhs_from_flux(problem, &flux(problem, rho, t, form)?))
}

/// Largest diffusivity the formulation can see at this density.
pub fn max_diffusivity(problem: &Problem, rho: &ScalarField, form: Formulation) -> f64 {
    let d0 = problem.d0();
    if !problem.tables.has_z1 {
        return d0;
    }
    let d = problem.grid.dim();
    let moments = self_friction_moments(problem, rho);
    let mut worst = 1.0f64;
    for m in &moments {
        let block = |t: &Tensor, s: f64| {
            let b = DMatrix::from_fn(d, d, |a, c| if a == c { 1.0 } else { 0.0 } + s * 0.5 * (t[(a, c)] + t[(c, a)]));
            b.symmetric_eigenvalues()
        };
        let plus = block(m, 1.0);
        let lmin = plus.iter().cloned().fold(f64::INFINITY, f64::min);
        if lmin > 0.0 {
            worst = worst.max(1.0 / lmin);
        }
        if form != Formulation::New {
            let minus = block(m, -1.0);
            worst = worst.max(minus.iter().cloned().fold(0.0, f64::max));
        }
    }
    d0 * worst
}

pub fn cfl_bound(problem: &Problem, rho: &ScalarField, form: Formulation) -> f64 {
    let h = problem.grid.min_spacing();
    CFL_FACTOR * h * h / (2.0 * problem.grid.dim() as f64 * max_diffusivity(problem, rho, form))
}

#[derive(Debug, Clone)]
pub struct SmolState {
    pub tau: f64,
    pub rho: ScalarField,
    /// Flux evaluated at the start of the last step.
    pub a: VectorField,
    pub dt_used: f64,
    pub mass: f64,
    pub min_rho: f64,
}

impl SmolState {
    pub fn new(rho: ScalarField) -> Self {
        let grid = rho.grid;
        Self {
            tau: 0.0,
            mass: rho.integrate(),
            min_rho: rho.min(),
            rho,
            a: VectorField::zeros(grid),
            dt_used: 0.0,
        }
    }
}

/// Counters accumulated while stepping.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepWarnings {
    pub cfl_reductions: usize,
    pub floored_cells: usize,
}

fn check_finite(field: &ScalarField, tau: f64, what: &str) -> Result<()> {
    if let Some(i) = field.values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NumericalAbort {
            time: tau,
            reason: format!("non-finite {what} at cell {i} ({})", field.values[i]),
        });
    }
    Ok(())
}

/// One SSP-RK2 (Heun) step. Negative values beyond the tolerance are floored
/// and counted in `warnings`.
pub fn step(
    problem: &Problem,
    state: &SmolState,
    dt: f64,
    form: Formulation,
    warnings: &mut StepWarnings,
) -> Result<SmolState> {
    let j0 = flux(problem, &state.rho, state.tau, form)?;
    let k1 = rhs_from_flux(problem, &j0);
    check_finite(&k1, state.tau, "right-hand side")?;
    let mut stage = state.rho.clone();
    stage.axpy(dt, &k1);
    let k2 = rhs(problem, &stage, state.tau + dt, form)?;
    check_finite(&k2, state.tau + dt, "right-hand side")?;
    let mut rho = state.rho.clone();
    for ((r, a), b) in rho.values.iter_mut().zip(&k1.values).zip(&k2.values) {
        *r += 0.5 * dt * (a + b);
    }
    check_finite(&rho, state.tau + dt, "density")?;
    let threshold = -NEGATIVITY_TOL * rho.max().abs();
    for v in rho.values.iter_mut() {
        if *v < threshold {
            *v = 0.0;
            warnings.floored_cells += 1;
        }
    }
    Ok(SmolState {
        tau: state.tau + dt,
        mass: rho.integrate(),
        min_rho: rho.min(),
        rho,
        a: j0,
        dt_used: dt,
    })
}

#[derive(Debug, Clone)]
pub struct EvolveOptions {
    pub t_final: f64,
    /// Requested step; `None` uses the CFL bound of the initial density.
    pub dt: Option<f64>,
    pub formulation: Formulation,
    /// Store a snapshot every this many steps (0 keeps only the endpoints).
    pub snapshot_every: usize,
}

impl EvolveOptions {
    pub fn new(t_final: f64, formulation: Formulation) -> Self {
        Self { t_final, dt: None, formulation, snapshot_every: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub tau: f64,
    pub mass: f64,
    pub min_rho: f64,
    pub l2_a: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub summary: Vec<SummaryRow>,
    pub snapshots: Vec<(f64, ScalarField)>,
    pub final_state: SmolState,
    pub warnings: StepWarnings,
    pub steps: usize,
}

impl Trajectory {
    pub fn write_summary_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "tau,mass,min_rho,l2_a")?;
        for r in &self.summary {
            writeln!(w, "{},{},{},{}", r.tau, r.mass, r.min_rho, r.l2_a)?;
        }
        Ok(())
    }

    pub fn final_rho(&self) -> &ScalarField {
        &self.final_state.rho
    }
}

/// Integrates to `t_final` with fixed steps (the last one shortened to land
/// exactly). A requested step above the CFL bound is reduced and counted.
pub fn evolve(problem: &Problem, rho0: &ScalarField, opts: &EvolveOptions) -> Result<Trajectory> {
    if !(opts.t_final >= 0.0) {
        return Err(Error::InvalidInput("t_final must be non-negative".into()));
    }
    if rho0.grid != problem.grid {
        return Err(Error::InvalidInput("initial density lives on a different grid".into()));
    }
    let form = opts.formulation;
    let mut state = SmolState::new(rho0.clone());
    let mut warnings = StepWarnings::default();
    let nominal = match opts.dt {
        Some(dt) if dt > 0.0 => dt,
        Some(_) => return Err(Error::InvalidInput("dt must be positive".into())),
        None => cfl_bound(problem, rho0, form),
    };
    let mut summary = Vec::new();
    let mut snapshots = vec![(0.0, rho0.clone())];
    let mut steps = 0usize;
    let tol = 1e-12 * opts.t_final.max(1.0);
    while state.tau < opts.t_final - tol {
        let mut dt = nominal.min(opts.t_final - state.tau);
        let bound = cfl_bound(problem, &state.rho, form);
        if dt > bound * (1.0 + 1e-12) {
            dt = bound;
            warnings.cfl_reductions += 1;
        }
        if !(dt > 1e-14 * opts.t_final.max(1e-300)) {
            return Err(Error::NumericalAbort { time: state.tau, reason: format!("time step collapsed to {dt:e}") });
        }
        let next = step(problem, &state, dt, form, &mut warnings)?;
        summary.push(SummaryRow { tau: state.tau, mass: state.mass, min_rho: state.min_rho, l2_a: next.a.l2_norm() });
        state = next;
        steps += 1;
        if opts.snapshot_every > 0 && steps % opts.snapshot_every == 0 && state.tau < opts.t_final - tol {
            snapshots.push((state.tau, state.rho.clone()));
        }
    }
    let final_flux = flux(problem, &state.rho, state.tau, form)?;
    summary.push(SummaryRow { tau: state.tau, mass: state.mass, min_rho: state.min_rho, l2_a: final_flux.l2_norm() });
    state.a = final_flux;
    if steps > 0 || opts.t_final == 0.0 {
        snapshots.push((state.tau, state.rho.clone()));
    }
    Ok(Trajectory { summary, snapshots, final_state: state, warnings, steps })
}

/// Pairwise distances between two fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Distance {
    pub l1: f64,
    pub linf: f64,
}

impl Distance {
    pub fn between(a: &ScalarField, b: &ScalarField) -> Self {
        Self { l1: a.l1_distance(b), linf: a.linf_distance(b) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseDistances {
    pub new_expanded: Distance,
    pub new_rex_lowen: Distance,
    pub expanded_rex_lowen: Distance,
}

impl PairwiseDistances {
    fn of(new: &ScalarField, exp: &ScalarField, rl: &ScalarField) -> Self {
        Self {
            new_expanded: Distance::between(new, exp),
            new_rex_lowen: Distance::between(new, rl),
            expanded_rex_lowen: Distance::between(exp, rl),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedDistances {
    pub tau: f64,
    pub distances: PairwiseDistances,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaComparison {
    pub lambda: f64,
    /// Distances between the right-hand sides at the initial density.
    pub rhs: PairwiseDistances,
    /// Distances between the evolved densities at each snapshot.
    pub evolved: Vec<TimedDistances>,
    /// Largest Fredholm residual over the run.
    pub solver_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub t_final: f64,
    pub dt: f64,
    pub entries: Vec<LambdaComparison>,
    /// Power fit of the expanded-vs-new right-hand-side L1 distance in `lambda`.
    pub rhs_expanded_fit: Option<PowerFit>,
    /// Same for the final evolved densities.
    pub evolved_expanded_fit: Option<PowerFit>,
}

/// Evolves the same initial data under all three formulations for each
/// self-friction amplitude `lambda` and reports pairwise distances.
pub fn compare_formulations(
    problem: &Problem,
    rho0: &ScalarField,
    t_final: f64,
    lambdas: &[f64],
    snapshots: usize,
) -> Result<ComparisonReport> {
    require_no_cross_friction(problem, "the formulation comparison")?;
    if problem.kernels.z1 == FrictionKernel::Zero && lambdas.iter().any(|l| *l != 0.0) {
        return Err(Error::InvalidInput("the comparison needs a z1 kernel shape to scale".into()));
    }
    let variants = lambdas
        .iter()
        .map(|&l| problem.with_kernels(KernelSet { z1: problem.kernels.z1.with_amplitude(l), ..problem.kernels.clone() }))
        .collect::<Result<Vec<_>>>()?;
    // One common step for every run so the distances measure the formulations only.
    let dt = variants
        .iter()
        .flat_map(|p| Formulation::ALL.map(|f| cfl_bound(p, rho0, f)))
        .fold(f64::INFINITY, f64::min)
        * 0.5;
    let n_steps = ((t_final / dt).ceil() as usize).max(1);
    let dt = t_final / n_steps as f64;
    let every = if snapshots == 0 { 0 } else { n_steps.div_ceil(snapshots) };
    let mut entries = Vec::with_capacity(lambdas.len());
    for (p, &lambda) in variants.iter().zip(lambdas) {
        let rhs_fields = Formulation::ALL.map(|f| rhs(p, rho0, 0.0, f));
        let [rn, re, rr] = rhs_fields;
        let rhs_d = PairwiseDistances::of(&rn?, &re?, &rr?);
        let runs = Formulation::ALL
            .par_iter()
            .map(|&f| {
                let opts = EvolveOptions { t_final, dt: Some(dt), formulation: f, snapshot_every: every };
                evolve(p, rho0, &opts)
            })
            .collect::<Vec<_>>();
        let mut runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
        let rl = runs.pop().unwrap();
        let ex = runs.pop().unwrap();
        let nw = runs.pop().unwrap();
        let evolved = nw
            .snapshots
            .iter()
            .zip(&ex.snapshots)
            .zip(&rl.snapshots)
            .map(|(((tau, a), (_, b)), (_, c))| TimedDistances { tau: *tau, distances: PairwiseDistances::of(a, b, c) })
            .collect();
        let solver_residual = nw
            .snapshots
            .iter()
            .map(|(tau, r)| solve_a(p, r, *tau).map(|s| s.residual))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        entries.push(LambdaComparison { lambda, rhs: rhs_d, evolved, solver_residual });
    }
    let fit_of = |sel: &dyn Fn(&LambdaComparison) -> f64| {
        let pts: Vec<(f64, f64)> = entries.iter().filter(|e| e.lambda > 0.0).map(|e| (e.lambda, sel(e))).collect();
        let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        power_law_fit(&x, &y, 1000, 0)
    };
    let rhs_expanded_fit = fit_of(&|e| e.rhs.new_expanded.l1);
    let evolved_expanded_fit = fit_of(&|e| e.evolved.last().map(|t| t.distances.new_expanded.l1).unwrap_or(0.0));
    Ok(ComparisonReport { t_final, dt, entries, rhs_expanded_fit, evolved_expanded_fit })
}

/// Averages a fine 1-D field onto a grid with half the cells.
pub fn coarsen_1d(field: &ScalarField) -> Result<ScalarField> {
    let g = field.grid;
    if g.dim() != 1 || g.cells()[0] % 2 != 0 {
        return Err(Error::InvalidInput("coarsening needs a 1-D grid with an even cell count".into()));
    }
    let coarse = Grid::uniform_1d(g.lengths()[0], g.cells()[0] / 2)?;
    let values = field.values.chunks(2).map(|c| 0.5 * (c[0] + c[1])).collect();
    ScalarField::from_values(coarse, values)
}
