use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use overdamp::analysis::{equilibrium_check, integral_pd_check, StudyReport};
use overdamp::cli::{run_study, RunConfig, Setup};
use overdamp::kernels::{KernelSet, PairPotential};
use overdamp::kinetic::KineticParams;

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn shipped() -> Vec<(String, Setup)> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(configs_dir())
        .expect("configs directory")
        .map(|e| e.expect("entry").path())
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let name = p.file_stem().unwrap().to_string_lossy().into_owned();
            let text = std::fs::read_to_string(&p).expect("config readable");
            let setup = RunConfig::from_toml_str(&text).and_then(|c| c.validate()).unwrap_or_else(|e| panic!("{name}: {e}"));
            (name, setup)
        })
        .collect()
}

fn load(name: &str) -> Setup {
    let text = std::fs::read_to_string(configs_dir().join(format!("{name}.toml"))).expect("config readable");
    RunConfig::from_toml_str(&text).and_then(|c| c.validate()).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn study(name: &str) -> StudyReport {
    let setup = load(name);
    let s = &setup.config.solver.study.name;
    run_study(&setup, s, setup.config.output.seed).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn value(r: &StudyReport, check: &str) -> (f64, bool) {
    let c = r.checks.iter().find(|c| c.name == check).unwrap_or_else(|| panic!("{}: missing check {check}", r.study));
    (c.value, c.passed)
}

fn failures(r: &StudyReport) -> Vec<String> {
    r.checks.iter().filter(|c| !c.passed).map(|c| format!("{}: {}", r.study, c.describe())).collect()
}

struct Outcome {
    passed: bool,
    detail: String,
}

fn criterion_1() -> Outcome {
    let mut worst = [0.0f64; 3];
    let mut fails = Vec::new();
    let kinetic = KineticParams::new(0.1, 8);
    for (name, setup) in shipped() {
        let p = setup.problem.with_kernels(KernelSet { v2: PairPotential::Free, ..setup.problem.kernels.clone() }).unwrap();
        let r = equilibrium_check(&p, p.grid.volume(), 1000, &kinetic, &setup.config.tolerances).unwrap();
        for (k, c) in ["flux_ratio", "smoluchowski_drift", "kinetic_drift"].iter().enumerate() {
            if let Some(c) = r.checks.iter().find(|x| x.name == *c) {
                worst[k] = worst[k].max(c.value);
            }
        }
        fails.extend(failures(&r).into_iter().map(|f| format!("{name}/{f}")));
    }
    Outcome {
        passed: fails.is_empty(),
        detail: format!(
            "max |a|/|rho| {:.2e}, smoluchowski drift {:.2e}, kinetic drift {:.2e} over every shipped kernel set {}",
            worst[0],
            worst[1],
            worst[2],
            fails.join("; ")
        ),
    }
}

fn criterion_2() -> Outcome {
    let r = study("compare_formulations");
    let (agree, _) = value(&r, "rhs_agreement_without_friction");
    let (sep, _) = value(&r, "rex_lowen_separation");
    let (order, _) = value(&r, "expanded_lambda_order");
    Outcome {
        passed: r.passed(),
        detail: format!("Z=0 agreement {agree:.2e}, rex_lowen separation {sep:.2e}, expanded order ci_low {order:.3}"),
    }
}

fn criteria_3_4() -> (Outcome, Outcome) {
    let lin = study("epsilon_linear");
    let int = study("epsilon_interacting");
    let (ql, pl) = value(&lin, "deviation_order");
    let (qi, pi) = value(&int, "deviation_order");
    let (rl, prl) = value(&lin, "refinement_change");
    let (ri, pri) = value(&int, "refinement_change");
    let (tl, ptl) = value(&lin, "tail_order");
    let (ti, pti) = value(&int, "tail_order");
    (
        Outcome {
            passed: pl && pi && prl && pri,
            detail: format!("q ci_low linear {ql:.3}, interacting {qi:.3}; refinement change {rl:.3}, {ri:.3}"),
        },
        Outcome { passed: ptl && pti, detail: format!("tail order ci_low linear {tl:.3}, interacting {ti:.3}") },
    )
}

fn criterion_5() -> Outcome {
    let r = study("spectral");
    let (sym, _) = value(&r, "weighted_symmetry");
    let (off, _) = value(&r, "off_degree_coupling");
    let (margin, _) = value(&r, "degree_bound_margin");
    let (leak, _) = value(&r, "kernel_outside_degree0");
    Outcome {
        passed: r.passed(),
        detail: format!(
            "symmetry {sym:.2e}, off-degree {off:.2e}, min(lambda_n - n delta) {margin:.3e}, kernel leak {leak:.2e} {}",
            failures(&r).join("; ")
        ),
    }
}

fn criterion_6() -> Outcome {
    let mut min_gamma = f64::INFINITY;
    let mut min_d = f64::INFINITY;
    let mut min_ratio = f64::INFINITY;
    let mut fails = Vec::new();
    for (name, setup) in shipped() {
        let r = integral_pd_check(&setup.problem, &setup.rho0, 50, 100, setup.config.output.seed, &setup.config.tolerances).unwrap();
        min_gamma = min_gamma.min(value(&r, "gamma_min_eigenvalue").0);
        min_d = min_d.min(value(&r, "diffusion_min_eigenvalue").0);
        min_ratio = min_ratio.min(value(&r, "min_ratio").0);
        fails.extend(failures(&r).into_iter().map(|f| format!("{name}/{f}")));
    }
    Outcome {
        passed: fails.is_empty(),
        detail: format!("min eig Gamma {min_gamma:.3e}, min eig D {min_d:.3e}, min form ratio {min_ratio:.6} {}", fails.join("; ")),
    }
}

fn criterion_7() -> Outcome {
    let r = study("psi");
    let (z, _) = value(&r, "zero_stays_zero");
    let (i, _) = value(&r, "integral_drift");
    let (m, _) = value(&r, "linear_psi_matches_density");
    Outcome { passed: r.passed(), detail: format!("zero data {z:.2e}, integral drift {i:.2e}, linear match {m:.2e}") }
}

fn criterion_8() -> Outcome {
    let ou = study("ou_stationary");
    let lv = study("langevin_vs_smoluchowski");
    let (zx, _) = value(&ou, "position_variance_z");
    let (zp, _) = value(&ou, "momentum_variance_z");
    let (zh, _) = value(&ou, "histogram_distance");
    let d: Vec<String> = lv.series["l1_distance"].iter().map(|(g, d)| format!("{g}:{d:.3}")).collect();
    Outcome {
        passed: ou.passed() && lv.passed(),
        detail: format!(
            "OU z-scores x {zx:.2}, p {zp:.2}, histogram {zh:.2}; L1 by gamma [{}] {}",
            d.join(", "),
            failures(&ou).into_iter().chain(failures(&lv)).collect::<Vec<_>>().join("; ")
        ),
    }
}

fn run_binary(config: &Path, out: &Path, threads: &str) -> Vec<(String, Vec<u8>)> {
    let status = Command::new(env!("CARGO_BIN_EXE_overdamp"))
        .args(["run", "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .env("OVERDAMP_THREADS", threads)
        .output()
        .expect("binary runs");
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "manifest.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn criterion_9() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let mut mismatches = Vec::new();
    let mut compared = 0;
    for name in ["langevin_ensemble", "kinetic_relaxation", "boltzmann_stationary", "spectral", "integral_pd"] {
        let cfg = configs_dir().join(format!("{name}.toml"));
        let a = run_binary(&cfg, &tmp.path().join(format!("{name}_1")), "1");
        let b = run_binary(&cfg, &tmp.path().join(format!("{name}_4")), "4");
        let c = run_binary(&cfg, &tmp.path().join(format!("{name}_4b")), "4");
        compared += a.len();
        if a != b || b != c {
            mismatches.push(name);
        }
    }
    Outcome {
        passed: mismatches.is_empty(),
        detail: format!("{compared} output files byte-identical across 1/4/4 threads {}", mismatches.join(", ")),
    }
}

fn report(n: &str, title: &str, o: Outcome, t: Instant) -> bool {
    let mark = if o.passed { "PASS" } else { "FAIL" };
    println!("criterion {n} {mark} {title}: {} [{:.1}s]", o.detail.trim_end(), t.elapsed().as_secs_f64());
    o.passed
}

fn main() {
    let mut ok = true;
    let t = Instant::now();
    ok &= report("1", "equilibrium null space", criterion_1(), t);
    let t = Instant::now();
    ok &= report("2", "formulation agreement", criterion_2(), t);
    let t = Instant::now();
    let (c3, c4) = criteria_3_4();
    ok &= report("3", "overdamped convergence", c3, t);
    ok &= report("4", "Hermite tail scaling", c4, t);
    let t = Instant::now();
    ok &= report("5", "spectral suite", criterion_5(), t);
    let t = Instant::now();
    ok &= report("6", "positive definiteness", criterion_6(), t);
    let t = Instant::now();
    ok &= report("7", "psi machinery", criterion_7(), t);
    let t = Instant::now();
    ok &= report("8", "Langevin oracle", criterion_8(), t);
    let t = Instant::now();
    ok &= report("9", "determinism", criterion_9(), t);
    if !ok {
        std::process::exit(1);
    }
}
