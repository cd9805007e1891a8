//! Underdamped N-particle Langevin dynamics with configuration-dependent
//! friction, integrated by Euler–Maruyama:
//!
//! ```text
//! dr = p / m dt
//! dp = (-gamma Gamma(r) p + X(r)) dt + sqrt(2 gamma m kBT) A(r) dW,   A A^T = Gamma
//! ```
//!
//! Each trajectory owns a ChaCha stream selected by its index, so results do
//! not depend on how trajectories are scheduled across threads.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernels::{assemble_gamma, sample_positions, AssembledFriction};
use crate::model::{Grid, Point, ScalarField};
use crate::problem::Problem;

/// Largest admissible `gamma * dt`.
pub const MAX_GAMMA_DT: f64 = 0.1;

/// Random stream of trajectory `index` under `seed`.
pub fn trajectory_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

#[derive(Debug, Clone)]
pub struct ParticleState {
    pub positions: Vec<Point>,
    pub momenta: Vec<Point>,
    rng: ChaCha8Rng,
}

#[derive(Debug, Clone)]
pub struct ParticleEnsemble {
    pub grid: Grid,
    pub seed: u64,
    pub trajectories: Vec<ParticleState>,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

impl ParticleEnsemble {
    /// Positions drawn from `rho0`, momenta from the Maxwellian.
    pub fn from_density(
        problem: &Problem,
        rho0: &ScalarField,
        n_traj: usize,
        n_particles: usize,
        seed: u64,
    ) -> Result<Self> {
        if n_traj == 0 || n_particles == 0 {
            return Err(Error::InvalidInput("ensemble needs at least one trajectory and one particle".into()));
        }
        if rho0.values.iter().any(|v| *v < 0.0) || !(rho0.integrate() > 0.0) {
            return Err(Error::InvalidInput("initial density must be non-negative with positive mass".into()));
        }
        let d = problem.grid.dim();
        let sd = (problem.params.mass * problem.params.kbt).sqrt();
        let trajectories = (0..n_traj)
            .map(|k| {
                let mut rng = trajectory_rng(seed, k);
                let positions = sample_positions(rho0, n_particles, &mut rng);
                let momenta = (0..n_particles)
                    .map(|_| {
                        let mut p = Point::zeros();
                        for a in 0..d {
                            p[a] = sd * normal(&mut rng);
                        }
                        p
                    })
                    .collect();
                ParticleState { positions, momenta, rng }
            })
            .collect();
        Ok(Self { grid: problem.grid, seed, trajectories })
    }

    /// Ensemble from explicit states; trajectory `k` gets stream `k`.
    pub fn from_states(grid: Grid, states: Vec<(Vec<Point>, Vec<Point>)>, seed: u64) -> Result<Self> {
        let n = states.first().map(|s| s.0.len()).unwrap_or(0);
        if n == 0 || states.iter().any(|(r, p)| r.len() != n || p.len() != n) {
            return Err(Error::InvalidInput("every trajectory needs the same positive particle count".into()));
        }
        let trajectories = states
            .into_iter()
            .enumerate()
            .map(|(k, (r, p))| ParticleState {
                positions: r.into_iter().map(|x| grid.wrap(x)).collect(),
                momenta: p,
                rng: trajectory_rng(seed, k),
            })
            .collect();
        Ok(Self { grid, seed, trajectories })
    }

    pub fn n_traj(&self) -> usize {
        self.trajectories.len()
    }

    pub fn n_particles(&self) -> usize {
        self.trajectories[0].positions.len()
    }
}

/// `A` with `A A^T = Gamma`: Cholesky, or the symmetric square root when
/// Cholesky fails.
pub fn noise_factor(gamma: &AssembledFriction) -> Result<DMatrix<f64>> {
    if let Some(ch) = gamma.matrix.clone().cholesky() {
        return Ok(ch.l());
    }
    let eig = SymmetricEigen::new(gamma.matrix.clone());
    let scale = eig.eigenvalues.amax().max(1.0);
    if let Some(v) = eig.eigenvalues.iter().find(|v| **v < -1e-12 * scale) {
        return Err(Error::Factorization(format!("friction tensor has negative eigenvalue {v:e}")));
    }
    let sqrt = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&sqrt) * eig.eigenvectors.transpose())
}

/// Conservative forces `X_i = -grad U1(r_i) - sum_j grad U2(r_i - r_j)`.
pub fn forces(problem: &Problem, positions: &[Point]) -> Vec<Point> {
    let grid = &problem.grid;
    let k = &problem.kernels;
    let mut f: Vec<Point> = positions.iter().map(|r| -k.v1.gradient(grid, r, 0.0)).collect();
    if !k.v2.is_free() {
        for i in 0..positions.len() {
            for j in (i + 1)..positions.len() {
                let d = grid.minimum_image(positions[i] - positions[j]);
                let g = k.v2.gradient(&d);
                f[i] -= g;
                f[j] += g;
            }
        }
    }
    f
}

fn has_friction_coupling(problem: &Problem) -> bool {
    !problem.kernels.z1.is_zero() || !problem.kernels.z2.is_zero()
}

fn step_state(problem: &Problem, s: &mut ParticleState, dt: f64, noise: bool) -> Result<()> {
    let grid = problem.grid;
    let d = grid.dim();
    let n = s.positions.len();
    let pp = &problem.params;
    let x = forces(problem, &s.positions);
    let amp = (2.0 * pp.gamma * pp.mass * pp.kbt * dt).sqrt();
    let moved: Vec<Point> = s.positions.iter().zip(&s.momenta).map(|(r, p)| grid.wrap(r + p * (dt / pp.mass))).collect();
    if has_friction_coupling(problem) {
        let gamma = assemble_gamma(&s.positions, &grid, &problem.kernels)?;
        let a = if noise { Some(noise_factor(&gamma)?) } else { None };
        let p = DVector::from_iterator(n * d, s.momenta.iter().flat_map(|p| (0..d).map(move |c| p[c])));
        let drag = &gamma.matrix * &p;
        let kick = a.map(|a| {
            let xi = DVector::from_iterator(n * d, (0..n * d).map(|_| normal(&mut s.rng)));
            a * xi
        });
        for i in 0..n {
            for c in 0..d {
                let r = i * d + c;
                let mut dp = dt * (-pp.gamma * drag[r] + x[i][c]);
                if let Some(k) = &kick {
                    dp += amp * k[r];
                }
                s.momenta[i][c] += dp;
            }
        }
    } else {
        for i in 0..n {
            for c in 0..d {
                let mut dp = dt * (-pp.gamma * s.momenta[i][c] + x[i][c]);
                if noise {
                    dp += amp * normal(&mut s.rng);
                }
                s.momenta[i][c] += dp;
            }
        }
    }
    s.positions = moved;
    if s.positions.iter().chain(&s.momenta).any(|v| !v.iter().all(|c| c.is_finite())) {
        return Err(Error::NumericalAbort { time: f64::NAN, reason: "non-finite particle state".into() });
    }
    Ok(())
}

fn check_dt(problem: &Problem, dt: f64) -> Result<()> {
    if !(dt > 0.0) || problem.params.gamma * dt > MAX_GAMMA_DT {
        return Err(Error::InvalidInput(format!(
            "Langevin step must satisfy 0 < gamma dt <= {MAX_GAMMA_DT}; got gamma dt = {}",
            problem.params.gamma * dt
        )));
    }
    Ok(())
}

/// One Euler–Maruyama step of every trajectory.
pub fn step_em(problem: &Problem, ensemble: &mut ParticleEnsemble, dt: f64, noise: bool) -> Result<()> {
    check_dt(problem, dt)?;
    ensemble
        .trajectories
        .par_iter_mut()
        .enumerate()
        .map(|(k, s)| step_state(problem, s, dt, noise).map_err(|e| tag(e, k)))
        .collect::<Result<Vec<()>>>()?;
    Ok(())
}

fn tag(e: Error, traj: usize) -> Error {
    match e {
        Error::NumericalAbort { time, reason } => Error::NumericalAbort { time, reason: format!("trajectory {traj}: {reason}") },
        Error::Factorization(m) => Error::Factorization(format!("trajectory {traj}: {m}")),
        other => other,
    }
}

/// Positions of every trajectory at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub time: f64,
    pub positions: Vec<Vec<Point>>,
}

impl Snapshot {
    /// CSV with `traj_id, particle_id, x[, y[, z]]`.
    pub fn write_csv<W: Write>(&self, mut w: W, dim: usize) -> Result<()> {
        let coords = ["x", "y", "z"][..dim].join(",");
        writeln!(w, "traj_id,particle_id,{coords}")?;
        for (t, traj) in self.positions.iter().enumerate() {
            for (i, p) in traj.iter().enumerate() {
                write!(w, "{t},{i}")?;
                for a in 0..dim {
                    write!(w, ",{}", p[a])?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }
}

/// Integrates every trajectory to `t_final` with (at most) step `dt`, and
/// records positions at the steps nearest to `snapshot_times`.
pub fn simulate(
    problem: &Problem,
    ensemble: &mut ParticleEnsemble,
    t_final: f64,
    dt: f64,
    snapshot_times: &[f64],
    noise: bool,
) -> Result<Vec<Snapshot>> {
    check_dt(problem, dt)?;
    if ensemble.grid != problem.grid {
        return Err(Error::InvalidInput("ensemble and problem use different grids".into()));
    }
    let n_steps = ((t_final / dt) * (1.0 - 1e-12)).ceil().max(0.0) as usize;
    let h = if n_steps == 0 { 0.0 } else { t_final / n_steps as f64 };
    let marks: Vec<usize> = snapshot_times
        .iter()
        .map(|t| if h == 0.0 { 0 } else { ((t / h).round() as usize).min(n_steps) })
        .collect();
    let recorded: Vec<Vec<Vec<Point>>> = ensemble
        .trajectories
        .par_iter_mut()
        .enumerate()
        .map(|(k, s)| {
            let mut rec = vec![Vec::new(); marks.len()];
            for step in 0..=n_steps {
                if step > 0 {
                    step_state(problem, s, h, noise).map_err(|e| match e {
                        Error::NumericalAbort { reason, .. } => {
                            Error::NumericalAbort { time: step as f64 * h, reason: format!("trajectory {k}: {reason}") }
                        }
                        other => tag(other, k),
                    })?;
                }
                for (m, &mk) in marks.iter().enumerate() {
                    if mk == step {
                        rec[m] = s.positions.clone();
                    }
                }
            }
            Ok(rec)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(marks
        .iter()
        .enumerate()
        .map(|(m, &mk)| Snapshot { time: mk as f64 * h, positions: recorded.iter().map(|r| r[m].clone()).collect() })
        .collect())
}

/// Histogram estimate of the one-body density and its standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityEstimate {
    pub density: ScalarField,
    pub std_error: ScalarField,
    pub samples: usize,
}

impl DensityEstimate {
    /// `sum_i w SE_i`, a scale for the Monte Carlo part of an L1 distance.
    pub fn l1_error_scale(&self) -> f64 {
        self.std_error.integrate()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        crate::model::write_columns_csv(w, &self.density.grid, &["rho", "se"], &[&self.density.values, &self.std_error.values])
    }
}

/// Pools every trajectory of the snapshots into per-cell counts normalised so
/// the density integrates to the particle count.
pub fn histogram_density(snapshots: &[Snapshot], grid: &Grid) -> Result<DensityEstimate> {
    let mut counts = vec![0usize; grid.len()];
    let mut n_traj = 0usize;
    let mut total = 0usize;
    for s in snapshots {
        for traj in &s.positions {
            n_traj += 1;
            for p in traj {
                counts[grid.cell_of(&grid.wrap(*p))] += 1;
                total += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::InvalidInput("no samples to histogram".into()));
    }
    let w = grid.cell_volume();
    let norm = 1.0 / (n_traj as f64 * w);
    let density = counts.iter().map(|c| *c as f64 * norm).collect();
    let std_error = counts
        .iter()
        .map(|c| {
            let p = *c as f64 / total as f64;
            (total as f64 * p * (1.0 - p)).sqrt() * norm
        })
        .collect();
    Ok(DensityEstimate {
        density: ScalarField::from_values(*grid, density)?,
        std_error: ScalarField::from_values(*grid, std_error)?,
        samples: total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{ExternalPotential, FrictionKernel, KernelSet, PairPotential};
    use crate::model::PhysicalParams;
    use rand::Rng;

    fn grid() -> Grid {
        Grid::uniform_1d(8.0, 32).unwrap()
    }

    fn chi2_critical_1pct(df: f64) -> f64 {
        let z = 2.326_347_874;
        let a = 2.0 / (9.0 * df);
        df * (1.0 - a + z * a.sqrt()).powi(3)
    }

    fn mean_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        (m, xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
    }

    #[test]
    fn noise_factor_reproduces_gamma() {
        let g = Grid::new(&[6.0, 6.0], &[8, 8]).unwrap();
        let kernels = KernelSet {
            z1: FrictionKernel::Isotropic { amplitude: 0.3, width: 0.8, cutoff: 2.5 },
            z2: FrictionKernel::Longitudinal { amplitude: 0.2, width: 0.8, cutoff: 2.5, regularization: 0.1 },
            ..KernelSet::free(2)
        };
        let mut rng = trajectory_rng(3, 0);
        let rho = ScalarField::constant(g, 1.0);
        for _ in 0..10 {
            let pos = sample_positions(&rho, 6, &mut rng);
            let gam = assemble_gamma(&pos, &g, &kernels).unwrap();
            let a = noise_factor(&gam).unwrap();
            assert!((&a * a.transpose() - &gam.matrix).amax() < 1e-12);
        }
        // Singular but positive semidefinite input takes the eigen path.
        let psd = AssembledFriction { n: 2, dim: 1, matrix: DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]) };
        let a = noise_factor(&psd).unwrap();
        assert!((&a * a.transpose() - &psd.matrix).amax() < 1e-12);
        let neg = AssembledFriction { n: 2, dim: 1, matrix: DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]) };
        assert!(noise_factor(&neg).is_err());
    }

    #[test]
    fn momentum_equipartition_without_forces() {
        let params = PhysicalParams::new(1.5, 2.0, 5.0, 1).unwrap();
        let p = Problem::new(grid(), KernelSet::free(1), params).unwrap();
        let rho = ScalarField::constant(grid(), 1.0);
        let mut ens = ParticleEnsemble::from_density(&p, &rho, 100, 100, 11).unwrap();
        for t in ens.trajectories.iter_mut() {
            for m in t.momenta.iter_mut() {
                *m = Point::zeros();
            }
        }
        simulate(&p, &mut ens, 2.0, 0.001, &[], true).unwrap();
        let ps: Vec<f64> = ens.trajectories.iter().flat_map(|t| t.momenta.iter().map(|m| m[0])).collect();
        let (_, var) = mean_var(&ps);
        let expected = params.mass * params.kbt;
        let se = expected * (2.0 / (ps.len() as f64 - 1.0)).sqrt();
        assert!((var - expected).abs() < 3.0 * se, "var {var} expected {expected} se {se}");
    }

    #[test]
    fn harmonic_position_variance() {
        let params = PhysicalParams::new(1.0, 1.0, 8.0, 1).unwrap();
        let k = 4.0;
        let kernels = KernelSet { v1: ExternalPotential::Harmonic { stiffness: k, center: Point::new(4.0, 0.0, 0.0) }, ..KernelSet::free(1) };
        let p = Problem::new(grid(), kernels, params).unwrap();
        let rho = p.boltzmann_density(1.0);
        let mut ens = ParticleEnsemble::from_density(&p, &rho, 100, 100, 5).unwrap();
        let snaps = simulate(&p, &mut ens, 2.0, 0.0005, &[2.0], true).unwrap();
        let xs: Vec<f64> = snaps[0].positions.iter().flatten().map(|r| r[0] - 4.0).collect();
        let (_, var) = mean_var(&xs);
        let expected = params.kbt / k;
        let se = expected * (2.0 / (xs.len() as f64 - 1.0)).sqrt();
        assert!((var - expected).abs() < 3.0 * se, "var {var} expected {expected} se {se}");
    }

    #[test]
    fn deterministic_damping() {
        let params = PhysicalParams::new(1.0, 1.0, 3.0, 1).unwrap();
        let p = Problem::new(grid(), KernelSet::free(1), params).unwrap();
        let states = vec![(vec![Point::new(1.0, 0.0, 0.0)], vec![Point::new(2.0, 0.0, 0.0)])];
        let mut ens = ParticleEnsemble::from_states(grid(), states, 0).unwrap();
        simulate(&p, &mut ens, 0.5, 1e-6, &[], false).unwrap();
        let p_end = ens.trajectories[0].momenta[0][0];
        let exact = 2.0 * (-3.0f64 * 0.5).exp();
        assert!((p_end - exact).abs() < 1e-6 * 2.0, "{p_end} {exact}");
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let params = PhysicalParams::new(1.0, 1.0, 4.0, 1).unwrap();
        let kernels = KernelSet {
            v2: PairPotential::GaussianCore { amplitude: 0.5, sigma: 0.3, cutoff: 1.5 },
            z1: FrictionKernel::Isotropic { amplitude: 0.1, width: 0.4, cutoff: 1.6 },
            z2: FrictionKernel::Isotropic { amplitude: 0.05, width: 0.4, cutoff: 1.6 },
            ..KernelSet::free(1)
        };
        let p = Problem::new(grid(), kernels, params).unwrap();
        let rho = ScalarField::constant(grid(), 1.0);
        let run = |threads| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                let mut ens = ParticleEnsemble::from_density(&p, &rho, 8, 6, 42).unwrap();
                simulate(&p, &mut ens, 0.2, 0.005, &[0.1, 0.2], true).unwrap()
            })
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a, b);
        assert_eq!(a[1].positions.len(), 8);
        assert!(a[1].positions.iter().all(|t| t.len() == 6));
        for t in &a[1].positions {
            for r in t {
                assert!(r[0] >= 0.0 && r[0] < 8.0);
            }
        }
    }

    #[test]
    fn step_size_is_checked() {
        let params = PhysicalParams::new(1.0, 1.0, 4.0, 1).unwrap();
        let p = Problem::new(grid(), KernelSet::free(1), params).unwrap();
        let mut ens = ParticleEnsemble::from_density(&p, &ScalarField::constant(grid(), 1.0), 1, 1, 0).unwrap();
        assert!(step_em(&p, &mut ens, 0.05, true).is_err());
        assert!(step_em(&p, &mut ens, 0.02, true).is_ok());
    }

    #[test]
    fn uniform_histogram_is_flat() {
        let g = grid();
        let mut rng = trajectory_rng(9, 0);
        let positions: Vec<Vec<Point>> =
            (0..200).map(|_| (0..100).map(|_| Point::new(rng.random::<f64>() * 8.0, 0.0, 0.0)).collect()).collect();
        let est = histogram_density(&[Snapshot { time: 0.0, positions }], &g).unwrap();
        assert!((est.density.integrate() - 100.0).abs() < 1e-9);
        let mean = 100.0 / 8.0;
        let outside = est.density.values.iter().zip(&est.std_error.values).filter(|(v, s)| (*v - mean).abs() > 3.0 * *s).count();
        assert!(outside <= 1);
    }

    #[test]
    fn single_cell_histogram() {
        let g = grid();
        let positions = vec![vec![Point::new(1.1, 0.0, 0.0); 7]];
        let est = histogram_density(&[Snapshot { time: 0.0, positions }], &g).unwrap();
        let c = g.cell_of(&Point::new(1.1, 0.0, 0.0));
        assert!((est.density.values[c] * g.cell_volume() - 7.0).abs() < 1e-12);
        assert_eq!(est.density.values.iter().filter(|v| **v != 0.0).count(), 1);
    }

    #[test]
    fn boltzmann_samples_pass_chi_square() {
        // Independent rejection sampler against the exact cell probabilities.
        let g = grid();
        let v = |x: f64| 1.5 * (2.0 * std::f64::consts::PI * x / 8.0).cos();
        let mut rng = trajectory_rng(17, 0);
        let n = 20000;
        let mut pos = Vec::with_capacity(n);
        while pos.len() < n {
            let x = rng.random::<f64>() * 8.0;
            if rng.random::<f64>() < (-(v(x) + 1.5)).exp() {
                pos.push(Point::new(x, 0.0, 0.0));
            }
        }
        let est = histogram_density(&[Snapshot { time: 0.0, positions: vec![pos] }], &g).unwrap();
        let fine = 200;
        let probs: Vec<f64> = (0..g.len())
            .map(|i| {
                let x0 = i as f64 * g.spacing(0);
                (0..fine).map(|k| (-v(x0 + (k as f64 + 0.5) * g.spacing(0) / fine as f64)).exp()).sum::<f64>()
            })
            .collect();
        let z: f64 = probs.iter().sum();
        let chi2: f64 = probs
            .iter()
            .zip(&est.density.values)
            .map(|(p, d)| {
                let expected = p / z * n as f64;
                let observed = d * g.cell_volume();
                (observed - expected).powi(2) / expected
            })
            .sum();
        assert!(chi2 < chi2_critical_1pct((g.len() - 1) as f64), "chi2 {chi2}");
    }
}
