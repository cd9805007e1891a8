//! Run configuration: parsing, defaults, validation and canonical output.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::Tolerances;
use crate::error::{Error, Result};
use crate::kernels::{builtin_kernels, KernelSet, KernelSpecs};
use crate::model::{Grid, PhysicalParams, Point, ScalarField};
use crate::problem::Problem;
use crate::smoluchowski::Formulation;

pub const SOLVER_KINDS: &[&str] = &["smoluchowski", "kinetic", "langevin", "study"];
pub const STUDIES: &[&str] = &[
    "equilibrium",
    "compare_formulations",
    "epsilon_convergence",
    "spectral",
    "integral_pd",
    "psi",
    "langevin_vs_smoluchowski",
    "ou_stationary",
];
pub const INITIAL_KINDS: &[&str] = &["boltzmann", "uniform", "sine", "gaussian"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicsConfig {
    pub kbt: f64,
    pub mass: f64,
    pub gamma: f64,
    pub dim: usize,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        Self { kbt: 1.0, mass: 1.0, gamma: 1.0, dim: 1 }
    }
}

impl PhysicsConfig {
    pub fn epsilon(&self) -> f64 {
        (self.kbt / self.mass).sqrt() / self.gamma
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub lengths: Vec<f64>,
    pub cells: Vec<usize>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { lengths: vec![8.0], cells: vec![64] }
    }
}

/// Initial density. `mass` defaults to the box volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialConfig {
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mass: Option<f64>,
    /// Relative modulation of the `sine` profile.
    pub amplitude: f64,
    pub mode: f64,
    /// Centre of the `gaussian` profile; defaults to the box centre.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub center: Option<Vec<f64>>,
    pub width: f64,
}

impl Default for InitialConfig {
    fn default() -> Self {
        Self { kind: "boltzmann".into(), mass: None, amplitude: 0.5, mode: 1.0, center: None, width: 0.25 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LangevinConfig {
    pub n_particles: usize,
    pub n_traj: usize,
    /// Step as a fraction of the momentum relaxation time, `gamma * dt`.
    pub gamma_dt: f64,
    /// Number of equally spaced recorded times ending at `t_final`.
    pub snapshots: usize,
}

impl Default for LangevinConfig {
    fn default() -> Self {
        Self { n_particles: 50, n_traj: 200, gamma_dt: 0.01, snapshots: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub name: String,
    pub lambdas: Vec<f64>,
    pub eps_list: Vec<f64>,
    /// Friction multipliers applied to `physics.gamma`.
    pub gammas: Vec<f64>,
    pub n_samples: usize,
    pub n_configs: usize,
    pub refine: bool,
    pub steps: usize,
    pub bump_width: f64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            name: String::new(),
            lambdas: vec![0.05, 0.1, 0.2],
            eps_list: vec![0.2, 0.1, 0.05],
            gammas: vec![1.0, 4.0, 16.0],
            n_samples: 50,
            n_configs: 100,
            refine: true,
            steps: 1000,
            bump_width: 0.5,
        }
    }
}

/// Solver selection and time stepping. `t_final` is physical time; the
/// kinetic solver runs to the rescaled time `D0 t_final`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub kind: String,
    pub t_final: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub rhs: String,
    pub snapshot_every: usize,
    pub nmax: usize,
    /// Kinetic epsilon; defaults to the value implied by `[physics]`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    pub initial: InitialConfig,
    pub langevin: LangevinConfig,
    pub study: StudyConfig,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            kind: "smoluchowski".into(),
            t_final: 1.0,
            dt: None,
            rhs: "new".into(),
            snapshot_every: 0,
            nmax: 8,
            epsilon: None,
            initial: InitialConfig::default(),
            langevin: LangevinConfig::default(),
            study: StudyConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub seed: u64,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), seed: 0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub physics: PhysicsConfig,
    pub grid: GridConfig,
    pub kernels: KernelSpecs,
    pub solver: SolverConfig,
    pub output: OutputConfig,
    pub tolerances: Tolerances,
}

/// A validated configuration with its derived objects.
#[derive(Debug, Clone)]
pub struct Setup {
    pub config: RunConfig,
    pub problem: Problem,
    pub rho0: ScalarField,
    pub formulation: Formulation,
}

fn check_range(errors: &mut Vec<String>, key: &str, v: f64, lo: f64, hi: f64, open_lo: bool) {
    let ok = v.is_finite() && if open_lo { v > lo } else { v >= lo } && v <= hi;
    if !ok {
        let l = if open_lo { "(" } else { "[" };
        let h = if hi == f64::MAX { "inf)".to_string() } else { format!("{hi}]") };
        errors.push(format!("{key} = {v} out of range (admissible: {l}{lo}, {h})"));
    }
}

fn check_member(errors: &mut Vec<String>, key: &str, v: &str, allowed: &[&str]) {
    if !allowed.contains(&v) {
        errors.push(format!("{key} = '{v}' is not one of: {}", allowed.join(", ")));
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(vec![e.to_string().trim_end().to_string()]))
    }

    pub fn to_canonical_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    /// Particle count used for sampled checks of the friction tensor.
    pub fn sample_particles(&self) -> usize {
        if self.solver.kind == "langevin" || self.solver.study.name.contains("langevin") || self.solver.study.name == "ou_stationary" {
            self.solver.langevin.n_particles.max(2)
        } else {
            let volume: f64 = self.grid.lengths.iter().product();
            self.solver.initial.mass.unwrap_or(volume).round().max(2.0) as usize
        }
    }

    /// Checks every field, collecting all problems, and builds the problem.
    pub fn validate(&self) -> Result<Setup> {
        let mut errors = Vec::new();
        let p = &self.physics;
        check_range(&mut errors, "physics.kbt", p.kbt, 0.0, f64::MAX, true);
        check_range(&mut errors, "physics.mass", p.mass, 0.0, f64::MAX, true);
        check_range(&mut errors, "physics.gamma", p.gamma, 0.0, f64::MAX, true);
        if !(1..=3).contains(&p.dim) {
            errors.push(format!("physics.dim = {} out of range (admissible: 1, 2, 3)", p.dim));
        }
        let g = &self.grid;
        if g.lengths.len() != p.dim || g.cells.len() != p.dim {
            errors.push(format!(
                "grid.lengths and grid.cells must have physics.dim = {} entries (got {} and {})",
                p.dim,
                g.lengths.len(),
                g.cells.len()
            ));
        }
        for (a, l) in g.lengths.iter().enumerate() {
            check_range(&mut errors, &format!("grid.lengths[{a}]"), *l, 0.0, f64::MAX, true);
        }
        for (a, c) in g.cells.iter().enumerate() {
            if *c < 4 {
                errors.push(format!("grid.cells[{a}] = {c} out of range (admissible: [4, inf))"));
            }
        }

        let s = &self.solver;
        check_member(&mut errors, "solver.kind", &s.kind, SOLVER_KINDS);
        check_range(&mut errors, "solver.t_final", s.t_final, 0.0, f64::MAX, false);
        if let Some(dt) = s.dt {
            check_range(&mut errors, "solver.dt", dt, 0.0, f64::MAX, true);
        }
        let formulation = Formulation::parse(&s.rhs);
        if formulation.is_none() {
            errors.push(format!("solver.rhs = '{}' is not one of: new, expanded, rex_lowen", s.rhs));
        }
        if !(1..=64).contains(&s.nmax) {
            errors.push(format!("solver.nmax = {} out of range (admissible: [1, 64])", s.nmax));
        }
        if let Some(e) = s.epsilon {
            check_range(&mut errors, "solver.epsilon", e, 0.0, f64::MAX, true);
        }
        let needs_1d = s.kind == "kinetic"
            || (s.kind == "study"
                && ["epsilon_convergence", "spectral", "langevin_vs_smoluchowski"].contains(&s.study.name.as_str()));
        if needs_1d && p.dim != 1 {
            errors.push(format!("solver '{}' requires physics.dim = 1", if s.kind == "study" { &s.study.name } else { &s.kind }));
        }

        let i = &s.initial;
        check_member(&mut errors, "solver.initial.kind", &i.kind, INITIAL_KINDS);
        if let Some(m) = i.mass {
            check_range(&mut errors, "solver.initial.mass", m, 0.0, f64::MAX, true);
        }
        check_range(&mut errors, "solver.initial.amplitude", i.amplitude, -1.0, 1.0, false);
        if i.amplitude.abs() >= 1.0 {
            errors.push("solver.initial.amplitude must satisfy |amplitude| < 1 to keep the density positive".into());
        }
        check_range(&mut errors, "solver.initial.mode", i.mode, 0.0, f64::MAX, false);
        if i.mode.fract() != 0.0 {
            errors.push("solver.initial.mode must be an integer".into());
        }
        check_range(&mut errors, "solver.initial.width", i.width, 0.0, f64::MAX, true);
        if let Some(c) = &i.center {
            if c.len() != p.dim {
                errors.push(format!("solver.initial.center must have {} entries", p.dim));
            }
        }

        let l = &s.langevin;
        if l.n_particles < 1 {
            errors.push("solver.langevin.n_particles must be at least 1".into());
        }
        if l.n_traj < 1 {
            errors.push("solver.langevin.n_traj must be at least 1".into());
        }
        check_range(&mut errors, "solver.langevin.gamma_dt", l.gamma_dt, 0.0, crate::langevin::MAX_GAMMA_DT, true);
        if l.snapshots < 1 {
            errors.push("solver.langevin.snapshots must be at least 1".into());
        }

        let st = &s.study;
        if s.kind == "study" {
            check_member(&mut errors, "solver.study.name", &st.name, STUDIES);
        }
        for (key, list) in [("lambdas", &st.lambdas), ("eps_list", &st.eps_list), ("gammas", &st.gammas)] {
            if list.is_empty() {
                errors.push(format!("solver.study.{key} must not be empty"));
            }
            for v in list.iter() {
                check_range(&mut errors, &format!("solver.study.{key} entry"), *v, 0.0, f64::MAX, true);
            }
        }
        if s.kind == "study" && st.name == "epsilon_convergence" {
            let lo = st.eps_list.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = st.eps_list.iter().cloned().fold(0.0, f64::max);
            if st.eps_list.len() < 3 || !(hi >= 4.0 * lo) {
                errors.push("solver.study.eps_list needs at least three values spanning a factor of at least 4".into());
            }
        }
        if st.n_samples < 1 || st.n_configs < 1 {
            errors.push("solver.study.n_samples and solver.study.n_configs must be at least 1".into());
        }
        check_range(&mut errors, "solver.study.bump_width", st.bump_width, 0.0, f64::MAX, true);
        let tol_values = serde_json::to_value(self.tolerances).map_err(|e| Error::Serialization(e.to_string()))?;
        if let Some(obj) = tol_values.as_object() {
            for (k, v) in obj {
                if !v.as_f64().is_some_and(|x| x.is_finite() && x >= 0.0) {
                    errors.push(format!("tolerances.{k} = {v} out of range (admissible: [0, inf))"));
                }
            }
        }

        if !errors.is_empty() {
            // Kernel sections are still checked so every problem is reported.
            let surrogate = Grid::new(&g.lengths, &g.cells)
                .or_else(|_| Grid::new(&g.lengths, &vec![4; g.lengths.len()]))
                .or_else(|_| Grid::uniform_1d(8.0, 64));
            if let Ok(grid) = surrogate {
                if let Err(Error::Config(mut k)) = builtin_kernels(&self.kernels, &grid) {
                    errors.append(&mut k);
                }
            }
            return Err(Error::Config(errors));
        }

        let grid = Grid::new(&g.lengths, &g.cells).map_err(|e| Error::Config(vec![e.to_string()]))?;
        let kernels = builtin_kernels(&self.kernels, &grid).map_err(|e| match e {
            Error::Config(list) => Error::Config(list),
            other => Error::Config(vec![other.to_string()]),
        })?;
        kernels.validate(&grid, self.sample_particles(), self.output.seed)?;
        let params = PhysicalParams::new(p.kbt, p.mass, p.gamma, p.dim)?;
        let problem = Problem::new(grid, kernels, params)?;
        let rho0 = initial_density(&self.solver.initial, &problem, &grid)?;
        Ok(Setup { config: self.clone(), problem, rho0, formulation: formulation.unwrap_or(Formulation::New) })
    }
}

/// Reads and validates a configuration file.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(vec![format!("cannot read config '{}': {e}", path.display())]))?;
    let cfg = RunConfig::from_toml_str(&text)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Unnormalised initial profile as a function of position.
pub fn initial_profile(init: &InitialConfig, kernels: &KernelSet, grid: &Grid, kbt: f64) -> Box<dyn Fn(&Point) -> f64 + Sync> {
    let dim = grid.dim();
    let lengths: Vec<f64> = grid.lengths().to_vec();
    let grid = *grid;
    match init.kind.as_str() {
        "uniform" => Box::new(|_| 1.0),
        "sine" => {
            let (a, m, l) = (init.amplitude, init.mode, lengths[0]);
            Box::new(move |x| 1.0 + a * (2.0 * std::f64::consts::PI * m * x[0] / l).sin())
        }
        "gaussian" => {
            let mut c = Point::zeros();
            for k in 0..dim {
                c[k] = init.center.as_ref().map_or(0.5 * lengths[k], |v| v[k]);
            }
            let w2 = 2.0 * init.width * init.width;
            Box::new(move |x| (-grid.minimum_image(x - c).norm_squared() / w2).exp())
        }
        _ => {
            let v1 = kernels.v1.clone();
            let vmin = grid.centers().iter().map(|x| v1.value(&grid, x, 0.0)).fold(f64::INFINITY, f64::min);
            Box::new(move |x| (-(v1.value(&grid, x, 0.0) - vmin) / kbt).exp())
        }
    }
}

fn initial_density(init: &InitialConfig, problem: &Problem, grid: &Grid) -> Result<ScalarField> {
    if init.kind == "boltzmann" {
        return Ok(problem.boltzmann_density(init.mass.unwrap_or(grid.volume())));
    }
    let f = initial_profile(init, &problem.kernels, grid, problem.params.kbt);
    let mut rho = ScalarField::from_fn(*grid, |x| f(x));
    if !(rho.integrate() > 0.0) {
        return Err(Error::Config(vec!["solver.initial describes a density with zero mass".into()]));
    }
    rho.normalize_to(init.mass.unwrap_or(grid.volume()));
    Ok(rho)
}
