//! Run orchestration, output files and the run manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::{initial_profile, RunConfig, Setup};
use crate::analysis::{
    digest, epsilon_convergence, equilibrium_check, formulation_study, integral_pd_check, junit_xml,
    langevin_vs_smoluchowski, operator_csv, ou_stationary_check, psi_study, spectral_checks, LangevinStudy, StudyReport,
};
use crate::error::{Error, Result};
use crate::fredholm::assemble;
use crate::kernels::ExternalPotential;
use crate::kinetic::{evolve_kinetic, linearized_operator, HermiteField, KineticParams};
use crate::langevin::{histogram_density, simulate, ParticleEnsemble};
use crate::model::{Point, ScalarField};
use crate::smoluchowski::{evolve, EvolveOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_PROPERTY: i32 = 4;

pub const PARTIAL_MARKER: &str = "PARTIAL";
pub const MANIFEST: &str = "manifest.json";

/// Exit code for an error raised before or during a run.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidInput(_) | Error::InadmissibleKernels(_) => EXIT_CONFIG,
        Error::Io(_) | Error::Serialization(_) => EXIT_IO,
        Error::IllConditioned { .. }
        | Error::SingularCell { .. }
        | Error::Singular
        | Error::NonContractive { .. }
        | Error::Factorization(_)
        | Error::NumericalAbort { .. } => EXIT_NUMERICAL,
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub junit: bool,
    pub dump_matrix: bool,
}

/// Long-format `series,x,y` rows for plotting.
#[derive(Debug, Clone, Default)]
pub struct PlotData {
    rows: Vec<(String, f64, f64)>,
}

impl PlotData {
    pub fn push(&mut self, series: &str, x: f64, y: f64) {
        self.rows.push((series.to_string(), x, y));
    }

    pub fn extend(&mut self, series: &str, points: impl IntoIterator<Item = (f64, f64)>) {
        for (x, y) in points {
            self.push(series, x, y);
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn series_names(&self) -> Vec<&str> {
        let mut names: Vec<&str> = Vec::new();
        for (s, _, _) in &self.rows {
            if !names.contains(&s.as_str()) {
                names.push(s);
            }
        }
        names
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("series,x,y\n");
        for (s, x, y) in &self.rows {
            let _ = writeln!(out, "{s},{x},{y}");
        }
        out
    }
}

/// Every series of a report plus the fitted power laws evaluated on the
/// abscissae of the series they fit.
pub fn emit_plotdata(report: &StudyReport) -> PlotData {
    let mut pd = PlotData::default();
    for (name, points) in &report.series {
        pd.extend(name, points.iter().cloned());
    }
    for (name, fit) in &report.fits {
        if let Some(points) = report.series.get(name) {
            pd.extend(&format!("fit_{name}"), points.iter().map(|(x, _)| (*x, fit.prefactor * x.powf(fit.exponent))));
        }
    }
    pd
}

/// Files produced by a run, in write order.
#[derive(Debug, Clone, Default)]
pub struct Outputs {
    pub files: Vec<(String, Vec<u8>)>,
    /// False when a property check failed.
    pub passed: bool,
    pub summary: String,
}

impl Outputs {
    fn add(&mut self, name: &str, bytes: impl Into<Vec<u8>>) {
        self.files.push((name.to_string(), bytes.into()));
    }

    fn add_with(&mut self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.add(name, buf);
        Ok(())
    }
}

fn first_coordinate(rho: &ScalarField) -> impl Iterator<Item = (f64, f64)> + '_ {
    rho.grid.centers().into_iter().zip(rho.values.iter()).map(|(c, v)| (c[0], *v))
}

fn json_bytes(v: &serde_json::Value) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn snapshot_times(t_final: f64, count: usize) -> Vec<f64> {
    (1..=count).map(|k| t_final * k as f64 / count as f64).collect()
}

fn run_smoluchowski(setup: &Setup, out: &mut Outputs) -> Result<()> {
    let s = &setup.config.solver;
    let opts = EvolveOptions { t_final: s.t_final, dt: s.dt, formulation: setup.formulation, snapshot_every: s.snapshot_every };
    let tr = evolve(&setup.problem, &setup.rho0, &opts)?;
    out.add_with("summary.csv", |w| tr.write_summary_csv(w))?;
    out.add_with("density_final.csv", |w| tr.final_rho().write_csv(w, "rho"))?;
    if s.snapshot_every > 0 {
        let mut csv = String::from("tau,cell,rho\n");
        for (tau, r) in &tr.snapshots {
            for (i, v) in r.values.iter().enumerate() {
                let _ = writeln!(csv, "{tau},{i},{v}");
            }
        }
        out.add("density_snapshots.csv", csv);
    }
    let change = tr.final_rho().linf_distance(&setup.rho0);
    let mut pd = PlotData::default();
    pd.extend("mass", tr.summary.iter().map(|r| (r.tau, r.mass)));
    pd.extend("min_rho", tr.summary.iter().map(|r| (r.tau, r.min_rho)));
    pd.extend("l2_a", tr.summary.iter().map(|r| (r.tau, r.l2_a)));
    pd.extend("rho_initial", first_coordinate(&setup.rho0));
    pd.extend("rho_final", first_coordinate(tr.final_rho()));
    out.add("plotdata.csv", pd.to_csv());
    out.add(
        "summary.json",
        json_bytes(&json!({
            "solver": "smoluchowski",
            "formulation": setup.formulation.name(),
            "steps": tr.steps,
            "dt": tr.final_state.dt_used,
            "tau_final": tr.final_state.tau,
            "mass_initial": setup.rho0.integrate(),
            "mass_final": tr.final_state.mass,
            "min_rho": tr.final_state.min_rho,
            "linf_change": change,
            "cfl_reductions": tr.warnings.cfl_reductions,
            "floored_cells": tr.warnings.floored_cells,
        }))?,
    );
    out.summary = format!("smoluchowski: {} steps, |rho(T) - rho(0)|_inf = {change:.3e}", tr.steps);
    Ok(())
}

fn kinetic_params(setup: &Setup) -> KineticParams {
    let s = &setup.config.solver;
    let eps = s.epsilon.unwrap_or(setup.problem.params.epsilon());
    KineticParams { dt: s.dt.map(|d| d * setup.problem.d0()), ..KineticParams::new(eps, s.nmax) }
}

fn run_kinetic(setup: &Setup, out: &mut Outputs) -> Result<()> {
    let s = &setup.config.solver;
    let kp = kinetic_params(setup);
    let t = setup.problem.d0() * s.t_final;
    let f0 = HermiteField::maxwellian(&setup.rho0, kp.nmax);
    let tr = evolve_kinetic(&setup.problem, &f0, &kp, t, s.snapshot_every)?;
    let mut csv = String::from("t,mass,min_rho,tail_norm\n");
    for r in &tr.summary {
        let _ = writeln!(csv, "{},{},{},{}", r.t, r.mass, r.min_rho, r.tail_norm);
    }
    out.add("kinetic_summary.csv", csv);
    out.add_with("hermite_final.csv", |w| tr.final_field.write_csv(w))?;
    let mut pd = PlotData::default();
    for (time, f) in &tr.snapshots {
        pd.extend(&format!("spectrum_t={time}"), f.degree_norms().into_iter().enumerate().map(|(n, v)| (n as f64, v)));
    }
    pd.extend("rho_final", first_coordinate(&tr.final_field.rho()));
    out.add("plotdata.csv", pd.to_csv());
    let change = tr.final_field.rho().linf_distance(&setup.rho0);
    out.add(
        "summary.json",
        json_bytes(&json!({
            "solver": "kinetic",
            "epsilon": kp.epsilon,
            "nmax": kp.nmax,
            "t_final": tr.t_final,
            "dt": tr.dt,
            "steps": tr.steps,
            "max_tail_ratio": tr.max_tail_ratio,
            "tail_warning": tr.tail_warning,
            "min_reconstruction": tr.min_reconstruction,
            "linf_change": change,
        }))?,
    );
    out.summary = format!("kinetic: {} steps, |rho(T) - rho(0)|_inf = {change:.3e}", tr.steps);
    Ok(())
}

fn run_langevin(setup: &Setup, seed: u64, out: &mut Outputs) -> Result<()> {
    let s = &setup.config.solver;
    let l = &s.langevin;
    let p = &setup.problem;
    let mut ens = ParticleEnsemble::from_density(p, &setup.rho0, l.n_traj, l.n_particles, seed)?;
    let dt = s.dt.unwrap_or(l.gamma_dt / p.params.gamma);
    let snaps = simulate(p, &mut ens, s.t_final, dt, &snapshot_times(s.t_final, l.snapshots), true)?;
    for (k, snap) in snaps.iter().enumerate() {
        out.add_with(&format!("snapshot_{k:03}.csv"), |w| snap.write_csv(w, p.grid.dim()))?;
    }
    let last = snaps.last().cloned().into_iter().collect::<Vec<_>>();
    let est = histogram_density(&last, &p.grid)?;
    out.add_with("density.csv", |w| est.write_csv(w))?;
    let mut pd = PlotData::default();
    pd.extend("histogram", first_coordinate(&est.density));
    pd.extend("std_error", first_coordinate(&est.std_error));
    out.add("plotdata.csv", pd.to_csv());
    out.add(
        "summary.json",
        json_bytes(&json!({
            "solver": "langevin",
            "dt": dt,
            "n_traj": l.n_traj,
            "n_particles": l.n_particles,
            "snapshot_times": snaps.iter().map(|s| s.time).collect::<Vec<_>>(),
            "l1_error_scale": est.l1_error_scale(),
        }))?,
    );
    out.summary = format!("langevin: {} trajectories of {} particles", l.n_traj, l.n_particles);
    Ok(())
}

/// Runs the named study on a validated setup.
pub fn run_study(setup: &Setup, name: &str, seed: u64) -> Result<StudyReport> {
    let cfg = &setup.config;
    let s = &cfg.solver;
    let st = &s.study;
    let tol = &cfg.tolerances;
    let p = &setup.problem;
    match name {
        "equilibrium" => equilibrium_check(p, setup.rho0.integrate(), st.steps, &kinetic_params(setup), tol),
        "compare_formulations" => formulation_study(p, &setup.rho0, &st.lambdas, s.t_final, tol),
        "epsilon_convergence" => {
            let profile = initial_profile(&s.initial, &p.kernels, &p.grid, p.params.kbt);
            let base = ScalarField::from_fn(p.grid, |x| profile(x)).integrate();
            let scale = setup.rho0.integrate() / base;
            let initial = move |x: &Point| scale * profile(x);
            epsilon_convergence(p, &initial, p.d0() * s.t_final, &st.eps_list, s.nmax, st.refine, tol)
        }
        "spectral" => spectral_checks(p, &setup.rho0, s.nmax, st.n_configs, seed, tol),
        "integral_pd" => integral_pd_check(p, &setup.rho0, st.n_samples, st.n_configs, seed, tol),
        "psi" => {
            let mut init = s.initial.clone();
            init.kind = "gaussian".into();
            init.center = None;
            init.width = st.bump_width;
            let bump = initial_profile(&init, &p.kernels, &p.grid, p.params.kbt);
            let bump = ScalarField::from_fn(p.grid, |x| bump(x));
            psi_study(p, &setup.rho0, &bump, s.t_final, tol)
        }
        "langevin_vs_smoluchowski" => {
            let l = &s.langevin;
            let study = LangevinStudy {
                gammas: st.gammas.iter().map(|g| g * p.params.gamma).collect(),
                tau_final: s.t_final,
                n_traj: l.n_traj,
                n_particles: l.n_particles,
                gamma_dt: l.gamma_dt,
                seed,
            };
            langevin_vs_smoluchowski(p, &setup.rho0, &study, tol)
        }
        "ou_stationary" => {
            let ExternalPotential::Harmonic { stiffness, .. } = p.kernels.v1 else {
                return Err(Error::InvalidInput("ou_stationary needs [kernels.v1] family = \"harmonic\"".into()));
            };
            let l = &s.langevin;
            ou_stationary_check(p, stiffness, l.n_traj, l.n_particles, l.gamma_dt, s.t_final, seed, tol)
        }
        other => Err(Error::InvalidInput(format!("unknown study '{other}'"))),
    }
}

/// Computes every output of a validated setup in memory.
pub fn execute(setup: &Setup, opts: &RunOptions) -> Result<Outputs> {
    let seed = setup.config.output.seed;
    let mut out = Outputs { passed: true, ..Default::default() };
    if opts.dump_matrix {
        let sys = assemble(&setup.problem, &setup.rho0, 0.0);
        out.add_with("fredholm_system.csv", |w| sys.dump_csv(w))?;
    }
    match setup.config.solver.kind.as_str() {
        "smoluchowski" => run_smoluchowski(setup, &mut out)?,
        "kinetic" => run_kinetic(setup, &mut out)?,
        "langevin" => run_langevin(setup, seed, &mut out)?,
        _ => {
            let name = setup.config.solver.study.name.as_str();
            let mut report = run_study(setup, name, seed)?;
            if opts.dump_matrix && name == "spectral" && report.attachments.is_empty() {
                let lin = linearized_operator(&setup.problem, &setup.rho0, setup.config.solver.nmax, true)?;
                report.attachments.push(("linearized_operator.csv".into(), operator_csv(&lin)));
            }
            out.add("report.json", report.to_json()? + "\n");
            out.add("plotdata.csv", emit_plotdata(&report).to_csv());
            if opts.junit {
                out.add("report.junit.xml", junit_xml(std::slice::from_ref(&report)));
            }
            for (name, body) in &report.attachments {
                out.add(name, body.clone());
            }
            out.passed = report.passed();
            let failed: Vec<String> = report.checks.iter().filter(|c| !c.passed).map(|c| c.describe()).collect();
            out.summary = if failed.is_empty() {
                format!("study {name}: all {} checks passed", report.checks.len())
            } else {
                format!("study {name}: {} of {} checks failed\n  {}", failed.len(), report.checks.len(), failed.join("\n  "))
            };
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config_sha256: String,
    pub seed: u64,
    pub started: String,
    pub finished: String,
    /// Output file name to SHA-256.
    pub files: BTreeMap<String, String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, dir.join(name))?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub code: i32,
    pub message: String,
    pub out_dir: Option<PathBuf>,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Applies command-line overrides to a parsed configuration.
pub fn apply_overrides(mut config: RunConfig, opts: &RunOptions) -> RunConfig {
    if let Some(seed) = opts.seed {
        config.output.seed = seed;
    }
    if let Some(out) = &opts.out {
        config.output.dir = out.clone();
    }
    config
}

/// Validates, executes and writes a run. A `PARTIAL` marker stays in the
/// output directory whenever the run did not complete.
pub fn run(config: &RunConfig, opts: &RunOptions) -> RunOutcome {
    let started = now();
    let config = apply_overrides(config.clone(), opts);
    let dir = config.output.dir.clone();
    let fail = |code: i32, message: String| {
        let _ = fs::create_dir_all(&dir).and_then(|_| fs::write(dir.join(PARTIAL_MARKER), format!("{message}\n")));
        RunOutcome { code, message, out_dir: Some(dir.clone()) }
    };
    if let Err(e) = fs::create_dir_all(&dir).and_then(|_| fs::write(dir.join(PARTIAL_MARKER), "running\n")) {
        return RunOutcome { code: EXIT_IO, message: format!("cannot prepare output directory '{}': {e}", dir.display()), out_dir: None };
    }
    let setup = match config.validate() {
        Ok(s) => s,
        Err(e) => return fail(exit_code(&e), e.to_string()),
    };
    let canonical = match config.to_canonical_toml() {
        Ok(c) => c,
        Err(e) => return fail(EXIT_IO, e.to_string()),
    };
    let outputs = match execute(&setup, opts) {
        Ok(o) => o,
        Err(e) => return fail(exit_code(&e), e.to_string()),
    };
    let mut files = BTreeMap::new();
    for (name, bytes) in &outputs.files {
        if let Err(e) = write_atomic(&dir, name, bytes) {
            return fail(EXIT_IO, format!("cannot write '{name}': {e}"));
        }
        files.insert(name.clone(), sha256_hex(bytes));
    }
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_sha256: digest(&canonical),
        seed: config.output.seed,
        started,
        finished: now(),
        files,
    };
    let written = serde_json::to_string_pretty(&manifest)
        .map_err(Error::from)
        .and_then(|m| write_atomic(&dir, MANIFEST, (m + "\n").as_bytes()));
    if let Err(e) = written {
        return fail(EXIT_IO, format!("cannot write manifest: {e}"));
    }
    let _ = fs::remove_file(dir.join(PARTIAL_MARKER));
    let code = if outputs.passed { EXIT_OK } else { EXIT_PROPERTY };
    RunOutcome { code, message: outputs.summary, out_dir: Some(dir) }
}
