use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Check, Comparison, StudyReport, Tolerances};
use crate::error::{Error, Result};
use crate::fredholm::{diffusion_tensor, solve_a};
use crate::kernels::{estimate_delta, FrictionKernel, KernelSet, PairPotential};
use crate::kinetic::{evolve_kinetic, linearized_operator, LinearizedOperator, psi_evolution, HermiteField, KineticParams};
use crate::langevin::{histogram_density, simulate, ParticleEnsemble};
use crate::model::{Grid, Point, ScalarField, VectorField};
use crate::problem::Problem;
use crate::smoluchowski::{cfl_bound, coarsen_1d, compare_formulations, evolve, rhs, EvolveOptions, Formulation};
use crate::stats::power_law_fit;

const BOOTSTRAP: usize = 2000;

fn describe(problem: &Problem, extra: &str) -> String {
    format!("{:?}|{:?}|{:?}|{extra}", problem.grid, problem.kernels, problem.params)
}

fn is_interacting(problem: &Problem) -> bool {
    problem.tables.has_v2 || problem.tables.has_z1 || problem.tables.has_z2
}

/// Same grid and parameters with every pair interaction removed.
pub fn linear_reference(problem: &Problem) -> Result<Problem> {
    problem.with_kernels(KernelSet {
        v2: PairPotential::Free,
        z1: FrictionKernel::Zero,
        z2: FrictionKernel::Zero,
        ..problem.kernels.clone()
    })
}

/// Discrete pair quadratic form
/// `sum_ij w^2 rho_i rho_j g_ij [v_i.(I/(N-1) + Z1_ij) v_i + v_i.Z2_ij v_j]`.
pub fn pd_quadratic_form(problem: &Problem, rho: &ScalarField, v: &VectorField, n_eff: f64) -> f64 {
    let grid = problem.grid;
    let t = &problem.tables;
    let w = grid.cell_volume();
    let n = grid.len();
    let inv = 1.0 / (n_eff - 1.0);
    let mut total = 0.0;
    for i in 0..n {
        let vi = v.values[i];
        let vv = vi.dot(&vi);
        for j in 0..n {
            let o = t.offset(i, j);
            let s = w * w * rho.values[i] * rho.values[j] * t.g[o];
            if s == 0.0 {
                continue;
            }
            let mut term = inv * vv + vi.dot(&(t.z1[o] * vi));
            if t.has_z2 {
                term += vi.dot(&(t.z2[o] * v.values[j]));
            }
            total += s * term;
        }
    }
    total
}

/// Quadratic-form ratios on random vector fields against the coercivity
/// estimate from sampled friction tensors, plus positivity of the per-cell
/// diffusion tensor when it is defined.
pub fn integral_pd_check(
    problem: &Problem,
    rho: &ScalarField,
    n_samples: usize,
    n_configs: usize,
    seed: u64,
    tol: &Tolerances,
) -> Result<StudyReport> {
    let n_eff = rho.integrate();
    if !(n_eff > 1.0) {
        return Err(Error::InvalidInput(format!("the density must carry more than one particle, got {n_eff}")));
    }
    let mut report = StudyReport::new("integral_pd", &describe(problem, &format!("{n_samples} {n_configs} {seed}")));
    let n_particles = n_eff.round().max(2.0) as usize;
    let delta = estimate_delta(&problem.kernels, &problem.grid, rho, n_particles, n_configs, seed)?;
    report.series_mut("gamma_min_eigenvalue").extend(delta.per_config.iter().enumerate().map(|(k, v)| (k as f64, *v)));
    report.push_check(Check::new(
        "gamma_min_eigenvalue",
        "positive",
        delta.min_eigenvalue,
        Comparison::AtLeast,
        f64::MIN_POSITIVE,
    ));
    let grid = problem.grid;
    let d = grid.dim();
    let w = grid.cell_volume();
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x5eed);
    let mut min_ratio = f64::INFINITY;
    for k in 0..n_samples {
        let v = VectorField {
            grid,
            values: (0..grid.len())
                .map(|_| {
                    let mut p = Point::zeros();
                    for a in 0..d {
                        p[a] = StandardNormal.sample(&mut rng);
                    }
                    p
                })
                .collect(),
        };
        let form = pd_quadratic_form(problem, rho, &v, n_eff);
        let mass: f64 = rho.values.iter().zip(&v.values).map(|(r, p)| w * r * p.norm_squared()).sum();
        let ratio = form / (delta.min_eigenvalue * mass);
        min_ratio = min_ratio.min(ratio);
        report.series_mut("ratio").push((k as f64, ratio));
    }
    report.push_check(Check::new("min_ratio", "pd_ratio", min_ratio, Comparison::AtLeast, 1.0 - tol.pd_ratio));
    // The per-cell tensor is defined without cross friction; with z2 present
    // it is evaluated on the same set with z2 removed.
    let self_only = if problem.tables.has_z2 {
        problem.with_kernels(KernelSet { z2: FrictionKernel::Zero, ..problem.kernels.clone() })?
    } else {
        problem.clone()
    };
    let m = diffusion_tensor(&self_only, rho)?.exact.min_eigenvalue();
    report.series_mut("diffusion_min_eigenvalue").push((0.0, m));
    report.push_check(Check::new("diffusion_min_eigenvalue", "positive", m, Comparison::AtLeast, f64::MIN_POSITIVE));
    Ok(report)
}

/// Stationarity of the Boltzmann density under the flux solve, the
/// Smoluchowski stepper and the kinetic solver.
pub fn equilibrium_check(problem: &Problem, mass: f64, steps: usize, kinetic: &KineticParams, tol: &Tolerances) -> Result<StudyReport> {
    if problem.tables.has_v2 {
        return Err(Error::InvalidInput("the equilibrium check needs a vanishing pair potential".into()));
    }
    let mut report = StudyReport::new("equilibrium", &describe(problem, &format!("{mass} {steps} {kinetic:?}")));
    let rho = problem.boltzmann_density(mass);
    let a = solve_a(problem, &rho, 0.0)?.a;
    report.push_check(Check::new("flux_ratio", "flux_null", a.l2_norm() / rho.l2_norm(), Comparison::AtMost, tol.flux_null));
    let dt = cfl_bound(problem, &rho, Formulation::New);
    let tr = evolve(problem, &rho, &EvolveOptions { t_final: steps as f64 * dt, dt: Some(dt), formulation: Formulation::New, snapshot_every: 0 })?;
    let drift = tr.final_rho().linf_distance(&rho) / rho.linf_norm();
    report.push_check(Check::new("smoluchowski_drift", "stationarity", drift, Comparison::AtMost, tol.stationarity));
    if problem.grid.dim() == 1 {
        let f0 = HermiteField::maxwellian(&rho, kinetic.nmax);
        let kdt = crate::kinetic::KineticSolver::new(problem, *kinetic)?.dt();
        let kt = evolve_kinetic(problem, &f0, kinetic, steps as f64 * kdt, 0)?;
        let kdrift = kt.final_field.max_abs_difference(&f0) / rho.linf_norm();
        report.push_check(Check::new("kinetic_drift", "stationarity", kdrift, Comparison::AtMost, tol.stationarity));
    }
    Ok(report)
}

/// Agreement of the three right-hand sides without friction coupling and
/// their separation as the self-friction amplitude grows.
pub fn formulation_study(
    problem: &Problem,
    rho0: &ScalarField,
    lambdas: &[f64],
    t_final: f64,
    tol: &Tolerances,
) -> Result<StudyReport> {
    let mut report = StudyReport::new("compare_formulations", &describe(problem, &format!("{lambdas:?} {t_final}")));
    let free = problem.with_kernels(KernelSet { z1: FrictionKernel::Zero, z2: FrictionKernel::Zero, ..problem.kernels.clone() })?;
    let base = rhs(&free, rho0, 0.0, Formulation::New)?;
    let mut agree = 0.0f64;
    for f in [Formulation::Expanded, Formulation::RexLowen] {
        agree = agree.max(rhs(&free, rho0, 0.0, f)?.linf_distance(&base));
    }
    report.push_check(Check::new("rhs_agreement_without_friction", "formulation_agreement", agree, Comparison::AtMost, tol.formulation_agreement));
    let cmp = compare_formulations(problem, rho0, t_final, lambdas, 8)?;
    for e in &cmp.entries {
        report.series_mut("rhs_l1_new_expanded").push((e.lambda, e.rhs.new_expanded.l1));
        report.series_mut("rhs_l1_new_rex_lowen").push((e.lambda, e.rhs.new_rex_lowen.l1));
        report.series_mut("rhs_linf_new_rex_lowen").push((e.lambda, e.rhs.new_rex_lowen.linf));
        if let Some(last) = e.evolved.last() {
            report.series_mut("evolved_l1_new_expanded").push((e.lambda, last.distances.new_expanded.l1));
            report.series_mut("evolved_l1_new_rex_lowen").push((e.lambda, last.distances.new_rex_lowen.l1));
        }
        for td in &e.evolved {
            report.series_mut(&format!("lambda_{}_l1_new_rex_lowen", e.lambda)).push((td.tau, td.distances.new_rex_lowen.l1));
        }
    }
    if let Some(&top) = lambdas.iter().max_by(|a, b| a.total_cmp(b)) {
        let scaled = problem.with_kernels(KernelSet { z1: problem.kernels.z1.with_amplitude(top), ..problem.kernels.clone() })?;
        for f in Formulation::ALL {
            let tr = evolve(&scaled, rho0, &EvolveOptions { t_final, dt: Some(cmp.dt), formulation: f, snapshot_every: 1 })?;
            let stride = (tr.snapshots.len() / 16).max(1);
            for (k, (tau, r)) in tr.snapshots.iter().enumerate() {
                if k % stride == 0 || k + 1 == tr.snapshots.len() {
                    report.series_mut(f.name()).push((*tau, r.l1_distance(rho0)));
                }
            }
        }
    }
    if let Some(top) = cmp.entries.iter().max_by(|a, b| a.lambda.total_cmp(&b.lambda)) {
        report.push_check(Check::new(
            "rex_lowen_separation",
            "solver_multiple",
            top.rhs.new_rex_lowen.linf,
            Comparison::AtLeast,
            tol.solver_multiple * tol.solver_tolerance,
        ));
    }
    match &cmp.rhs_expanded_fit {
        Some(fit) => {
            report.fits.insert("rhs_l1_new_expanded".into(), fit.clone());
            report.push_check(Check::new("expanded_lambda_order", "lambda_order", fit.ci_low, Comparison::AtLeast, tol.lambda_order));
        }
        None => report.push_check(Check::new("expanded_lambda_order", "lambda_order", f64::NAN, Comparison::AtLeast, tol.lambda_order)),
    }
    if let Some(fit) = &cmp.evolved_expanded_fit {
        report.fits.insert("evolved_l1_new_expanded".into(), fit.clone());
    }
    Ok(report)
}

/// Deviation of the kinetic density from the Smoluchowski density at
/// rescaled time `t_final` over an epsilon sweep, the Hermite tail over the
/// same sweep, and a grid-refinement control at the middle epsilon.
pub fn epsilon_convergence(
    problem: &Problem,
    initial: &(dyn Fn(&Point) -> f64 + Sync),
    t_final: f64,
    eps_list: &[f64],
    nmax: usize,
    refine: bool,
    tol: &Tolerances,
) -> Result<StudyReport> {
    if eps_list.len() < 3 {
        return Err(Error::InvalidInput("the epsilon sweep needs at least three values".into()));
    }
    let lo = eps_list.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = eps_list.iter().cloned().fold(0.0, f64::max);
    if !(hi >= 4.0 * lo) || !(lo > 0.0) {
        return Err(Error::InvalidInput("the epsilon sweep must span a factor of at least 4".into()));
    }
    if problem.grid.dim() != 1 {
        return Err(Error::InvalidInput("the epsilon study runs on 1-D grids".into()));
    }
    let mut report = StudyReport::new("epsilon_convergence", &describe(problem, &format!("{t_final} {eps_list:?} {nmax} {refine}")));
    let run = |p: &Problem, eps: f64| -> Result<(f64, f64, f64)> {
        let rho0 = ScalarField::from_fn(p.grid, initial);
        let smol = reference_density(p, &rho0, t_final)?;
        let kp = KineticParams::new(eps, nmax);
        let tr = evolve_kinetic(p, &HermiteField::maxwellian(&rho0, nmax), &kp, t_final, 0)?;
        let diag = crate::kinetic::hilbert_diagnostics(p, &tr.final_field, eps, Some(&smol))?;
        let rel = if diag.fredholm_flux > 0.0 { diag.flux_consistency / diag.fredholm_flux } else { diag.flux_consistency };
        Ok((diag.psi_estimate_l1.unwrap_or(f64::NAN), diag.tail_norm, rel))
    };
    let mut devs = Vec::new();
    let mut tails = Vec::new();
    for &eps in eps_list {
        let (dev, tail, rel) = run(problem, eps)?;
        report.series_mut("deviation_l1").push((eps, dev));
        report.series_mut("tail_norm").push((eps, tail));
        report.series_mut("flux_consistency_relative").push((eps, rel));
        devs.push(dev);
        tails.push(tail);
    }
    let (order_tol, order_name) = if is_interacting(problem) {
        (tol.eps_order_interacting, "eps_order_interacting")
    } else {
        (tol.eps_order_linear, "eps_order_linear")
    };
    let fit = power_law_fit(eps_list, &devs, BOOTSTRAP, 1);
    report.push_check(Check::new("deviation_order", order_name, fit.as_ref().map_or(f64::NAN, |f| f.ci_low), Comparison::AtLeast, order_tol));
    if let Some(f) = fit {
        report.fits.insert("deviation_l1".into(), f);
    }
    let tfit = power_law_fit(eps_list, &tails, BOOTSTRAP, 2);
    report.push_check(Check::new("tail_order", "tail_order", tfit.as_ref().map_or(f64::NAN, |f| f.ci_low), Comparison::AtLeast, tol.tail_order));
    if let Some(f) = tfit {
        report.fits.insert("tail_norm".into(), f);
    }
    if refine {
        let mut sorted = eps_list.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mid = sorted[sorted.len() / 2];
        let k = eps_list.iter().position(|e| *e == mid).unwrap_or(0);
        let fine_grid = Grid::uniform_1d(problem.grid.lengths()[0], problem.grid.cells()[0] * 2)?;
        let fine = problem.with_grid(fine_grid)?;
        let (dev_fine, _, _) = run(&fine, mid)?;
        let change = (dev_fine - devs[k]).abs() / devs[k];
        report.series_mut("refinement").push((problem.grid.cells()[0] as f64, devs[k]));
        report.series_mut("refinement").push((fine_grid.cells()[0] as f64, dev_fine));
        report.push_check(Check::new("refinement_change", "refinement_change", change, Comparison::AtMost, tol.refinement_change));
    }
    Ok(report)
}

/// Smoluchowski density at rescaled time `t` (physical time `t / D0`) with a
/// step well inside the stability bound.
pub fn reference_density(problem: &Problem, rho0: &ScalarField, t: f64) -> Result<ScalarField> {
    let tau = t / problem.d0();
    let bound = cfl_bound(problem, rho0, Formulation::New) * 0.25;
    let steps = ((tau / bound).ceil() as usize).max(1);
    let opts = EvolveOptions { t_final: tau, dt: Some(tau / steps as f64), formulation: Formulation::New, snapshot_every: 0 };
    Ok(evolve(problem, rho0, &opts)?.final_state.rho)
}

/// Structure of the linearised collision operator: weighted symmetry,
/// degree preservation, per-degree spectral bounds and the null space.
pub fn spectral_checks(
    problem: &Problem,
    rho0: &ScalarField,
    nmax: usize,
    n_configs: usize,
    seed: u64,
    tol: &Tolerances,
) -> Result<StudyReport> {
    let mut report = StudyReport::new("spectral", &describe(problem, &format!("{nmax} {n_configs} {seed}")));
    let lin = linearized_operator(problem, rho0, nmax, true)?;
    let wl = lin.weighted();
    let sym = (&wl - wl.transpose()).amax() / wl.amax().max(f64::MIN_POSITIVE);
    report.push_check(Check::new("weighted_symmetry", "weighted_symmetry", sym, Comparison::AtMost, tol.weighted_symmetry));
    let mut off = 0.0f64;
    for n in 0..=nmax {
        for m in 0..=nmax {
            if n != m {
                off = off.max(lin.block(n, m).amax());
            }
        }
    }
    report.push_check(Check::new("off_degree_coupling", "off_degree", off, Comparison::AtMost, tol.off_degree));

    let n_particles = rho0.integrate().round().max(2.0) as usize;
    let delta = estimate_delta(&problem.kernels, &problem.grid, rho0, n_particles, n_configs, seed)?.min_eigenvalue;
    report.series_mut("delta_est").push((0.0, delta));
    let bar = linearized_operator(problem, rho0, nmax, false)?;
    let mut worst_margin = f64::INFINITY;
    let mut monotone = true;
    let mut prev = f64::NEG_INFINITY;
    for n in 1..=nmax {
        let b = -bar.block(n, n);
        let ev = SymmetricEigen::new((&b + b.transpose()) * 0.5).eigenvalues;
        let min = ev.iter().cloned().fold(f64::INFINITY, f64::min);
        report.series_mut("degree_min_eigenvalue").push((n as f64, min));
        worst_margin = worst_margin.min(min - n as f64 * delta);
        monotone &= min > prev;
        prev = min;
    }
    report.push_check(Check::new("degree_bound_margin", "positive", worst_margin, Comparison::AtLeast, 0.0));
    report.push_check(Check::new("degree_minimum_increasing", "positive", if monotone { 1.0 } else { 0.0 }, Comparison::AtLeast, 1.0));

    // Symmetrised operator W^{1/2} L W^{-1/2} shares the spectrum of L.
    let sq: Vec<f64> = lin.weight.iter().map(|w| w.sqrt()).collect();
    let size = lin.matrix.nrows();
    let s = DMatrix::from_fn(size, size, |r, c| sq[r] * lin.matrix[(r, c)] / sq[c]);
    let s = (&s + s.transpose()) * 0.5;
    let eig = SymmetricEigen::new(s);
    let scale = eig.eigenvalues.amax().max(1.0);
    let mut kernel_dim = 0usize;
    let mut leak = 0.0f64;
    for (k, ev) in eig.eigenvalues.iter().enumerate() {
        if ev.abs() <= tol.null_space * scale {
            kernel_dim += 1;
            let v: DVector<f64> = eig.eigenvectors.column(k).into_owned();
            let higher = v.rows(lin.cells, size - lin.cells).amax();
            leak = leak.max(higher);
        }
    }
    report.series_mut("kernel_dimension").push((0.0, kernel_dim as f64));
    report.push_check(Check::new("kernel_outside_degree0", "null_space", leak, Comparison::AtMost, tol.null_space));
    report.push_check(Check::new(
        "kernel_dimension_deficit",
        "null_space",
        (lin.cells as f64 - kernel_dim as f64).abs(),
        Comparison::AtMost,
        0.0,
    ));
    if !report.passed() {
        report.attachments.push(("linearized_operator.csv".into(), operator_csv(&lin)));
    }
    Ok(report)
}

/// Non-zero entries of the linearised operator as `row,col,value`.
pub fn operator_csv(lin: &LinearizedOperator) -> String {
    let size = lin.matrix.nrows();
    let mut csv = String::from("row,col,value\n");
    for r in 0..size {
        for c in 0..size {
            let v = lin.matrix[(r, c)];
            if v != 0.0 {
                csv.push_str(&format!("{r},{c},{v}\n"));
            }
        }
    }
    csv
}

/// The `psi` correction: zero data stays zero, its integral is conserved,
/// and without pair interactions it follows the density equation.
pub fn psi_study(problem: &Problem, rho0: &ScalarField, bump: &ScalarField, tau_final: f64, tol: &Tolerances) -> Result<StudyReport> {
    let mut report = StudyReport::new("psi", &describe(problem, &format!("{tau_final}")));
    let opts = EvolveOptions { t_final: tau_final, dt: None, formulation: Formulation::New, snapshot_every: 1 };
    let tr = evolve(problem, rho0, &opts)?;
    let zero = psi_evolution(problem, &ScalarField::zeros(problem.grid), &tr.snapshots)?;
    report.push_check(Check::new("zero_stays_zero", "psi_zero", zero.summary().max_abs, Comparison::AtMost, tol.psi_zero));
    let b = psi_evolution(problem, bump, &tr.snapshots)?;
    let drift = b.summary().integral_drift;
    report.series_mut("psi_integral").extend(b.times.iter().cloned().zip(b.integral.iter().cloned()));
    report.push_check(Check::new("integral_drift", "psi_integral", drift, Comparison::AtMost, tol.psi_integral));

    let lin = linear_reference(problem)?;
    let ltr = evolve(&lin, rho0, &opts)?;
    let lpsi = psi_evolution(&lin, bump, &ltr.snapshots)?;
    let dt = ltr.snapshots.get(1).map(|s| s.0).unwrap_or(tau_final);
    let bump_run = evolve(&lin, bump, &EvolveOptions { t_final: tau_final, dt: Some(dt), formulation: Formulation::New, snapshot_every: 1 })?;
    let mut diff = 0.0f64;
    if bump_run.snapshots.len() != lpsi.psi.len() {
        diff = f64::INFINITY;
    } else {
        for ((_, r), q) in bump_run.snapshots.iter().zip(&lpsi.psi) {
            diff = diff.max(r.linf_distance(q));
        }
    }
    report.push_check(Check::new("linear_psi_matches_density", "psi_match", diff, Comparison::AtMost, tol.psi_match));
    Ok(report)
}

/// Settings of the particle comparison.
#[derive(Debug, Clone)]
pub struct LangevinStudy {
    pub gammas: Vec<f64>,
    pub tau_final: f64,
    pub n_traj: usize,
    pub n_particles: usize,
    /// `gamma * dt` used for every friction value.
    pub gamma_dt: f64,
    pub seed: u64,
}

/// Histogram of Langevin ensembles against the Smoluchowski density at the
/// same physical time for increasing friction.
pub fn langevin_vs_smoluchowski(problem: &Problem, rho0: &ScalarField, setup: &LangevinStudy, tol: &Tolerances) -> Result<StudyReport> {
    if problem.grid.dim() != 1 {
        return Err(Error::InvalidInput("the particle comparison runs on 1-D grids".into()));
    }
    let mut report = StudyReport::new("langevin_vs_smoluchowski", &describe(problem, &format!("{setup:?}")));
    let mut rho_n = rho0.clone();
    rho_n.normalize_to(setup.n_particles as f64);
    let mut dists = Vec::new();
    let mut eps_err = 0.0f64;
    for &gamma in &setup.gammas {
        let params = crate::model::PhysicalParams::new(problem.params.kbt, problem.params.mass, gamma, problem.params.dim)?;
        let p = problem.with_params(params)?;
        eps_err = eps_err.max((params.epsilon() - (params.kbt / params.mass).sqrt() / gamma).abs());
        let smol = evolve(&p, &rho_n, &EvolveOptions::new(setup.tau_final, Formulation::New))?.final_state.rho;
        let fine = p.with_grid(Grid::uniform_1d(p.grid.lengths()[0], p.grid.cells()[0] * 2)?)?;
        let fine_rho = ScalarField::from_fn(fine.grid, |x| interpolate_periodic(&rho_n, x[0]));
        let smol_fine = coarsen_1d(&evolve(&fine, &fine_rho, &EvolveOptions::new(setup.tau_final, Formulation::New))?.final_state.rho)?;
        let disc = smol.l1_distance(&smol_fine);
        let mut ens = ParticleEnsemble::from_density(&p, &rho_n, setup.n_traj, setup.n_particles, setup.seed)?;
        let snaps = simulate(&p, &mut ens, setup.tau_final, setup.gamma_dt / gamma, &[setup.tau_final], true)?;
        let est = histogram_density(&snaps, &p.grid)?;
        let d = est.density.l1_distance(&smol);
        report.series_mut("l1_distance").push((gamma, d));
        report.series_mut("mc_error").push((gamma, est.l1_error_scale()));
        report.series_mut("discretization_error").push((gamma, disc));
        report.series_mut("epsilon").push((gamma, params.epsilon()));
        dists.push(d);
    }
    let steps = dists.windows(2).filter(|w| w[1] <= w[0]).count();
    report.push_check(Check::new(
        "non_increasing_steps",
        "monotone",
        steps as f64,
        Comparison::AtLeast,
        dists.len().saturating_sub(1) as f64,
    ));
    report.push_check(Check::new("epsilon_reconstruction", "exact", eps_err, Comparison::AtMost, 1e-14));
    let _ = tol;
    Ok(report)
}

/// Linear interpolation of a periodic 1-D field at coordinate `x`.
pub fn interpolate_periodic(f: &ScalarField, x: f64) -> f64 {
    let g = f.grid;
    let h = g.spacing(0);
    let n = g.cells()[0];
    let s = x / h - 0.5;
    let i0 = s.floor();
    let t = s - i0;
    let i = (i0 as i64).rem_euclid(n as i64) as usize;
    let j = (i + 1) % n;
    (1.0 - t) * f.values[i] + t * f.values[j]
}

/// Stationary Ornstein–Uhlenbeck law for independent particles in a harmonic
/// trap: position variance `kBT / k` and momentum variance `m kBT`.
pub fn ou_stationary_check(
    problem: &Problem,
    stiffness: f64,
    n_traj: usize,
    n_particles: usize,
    gamma_dt: f64,
    t_run: f64,
    seed: u64,
    tol: &Tolerances,
) -> Result<StudyReport> {
    let center = match problem.kernels.v1 {
        crate::kernels::ExternalPotential::Harmonic { center, .. } => center,
        _ => return Err(Error::InvalidInput("the stationary-law check needs a harmonic external potential".into())),
    };
    if is_interacting(problem) {
        return Err(Error::InvalidInput("the stationary-law check needs non-interacting particles".into()));
    }
    let mut report = StudyReport::new("ou_stationary", &describe(problem, &format!("{stiffness} {n_traj} {n_particles} {gamma_dt} {t_run} {seed}")));
    let pp = problem.params;
    let mut rho = problem.boltzmann_density(n_particles as f64);
    rho.normalize_to(n_particles as f64);
    let mut ens = ParticleEnsemble::from_density(problem, &rho, n_traj, n_particles, seed)?;
    let snaps = simulate(problem, &mut ens, t_run, gamma_dt / pp.gamma, &[t_run], true)?;
    let d = problem.grid.dim();
    let xs: Vec<f64> = snaps[0]
        .positions
        .iter()
        .flatten()
        .flat_map(|r| {
            let dx = problem.grid.minimum_image(r - center);
            (0..d).map(move |a| dx[a]).collect::<Vec<_>>()
        })
        .collect();
    let ps: Vec<f64> = ens.trajectories.iter().flat_map(|t| t.momenta.iter().flat_map(|p| (0..d).map(move |a| p[a]))).collect();
    let z = |xs: &[f64], expected: f64| {
        let n = xs.len() as f64;
        let var = xs.iter().map(|x| x * x).sum::<f64>() / n;
        let se = expected * (2.0 / n).sqrt();
        ((var - expected).abs() / se, var)
    };
    let (zx, vx) = z(&xs, pp.kbt / stiffness);
    let (zp, vp) = z(&ps, pp.mass * pp.kbt);
    report.series_mut("position_variance").push((pp.gamma, vx));
    report.series_mut("momentum_variance").push((pp.gamma, vp));
    report.push_check(Check::new("position_variance_z", "standard_errors", zx, Comparison::AtMost, tol.standard_errors));
    report.push_check(Check::new("momentum_variance_z", "standard_errors", zp, Comparison::AtMost, tol.standard_errors));
    let est = histogram_density(&snaps, &problem.grid)?;
    let dist = est.density.l1_distance(&rho);
    report.series_mut("l1_distance").push((pp.gamma, dist));
    report.push_check(Check::new(
        "histogram_distance",
        "standard_errors",
        dist / est.l1_error_scale(),
        Comparison::AtMost,
        tol.standard_errors,
    ));
    Ok(report)
}
