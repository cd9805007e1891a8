use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use overdamp::cli::run::{EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, EXIT_PROPERTY, MANIFEST, PARTIAL_MARKER};
use overdamp::cli::{parse_config, run, RunConfig, RunManifest, RunOptions};
use overdamp::error::Error;
use sha2::{Digest, Sha256};

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn shipped_paths() -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(configs_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    v.sort();
    v
}

fn config_errors(text: &str) -> Vec<String> {
    match RunConfig::from_toml_str(text).and_then(|c| c.validate()) {
        Err(Error::Config(list)) => list,
        Err(other) => vec![other.to_string()],
        Ok(_) => Vec::new(),
    }
}

fn run_in(dir: &Path, text: &str, opts: RunOptions) -> (i32, String) {
    let cfg = RunConfig::from_toml_str(text).unwrap();
    let outcome = run(&cfg, &RunOptions { out: Some(dir.to_path_buf()), ..opts });
    (outcome.code, outcome.message)
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn plot_series(dir: &Path) -> BTreeMap<String, Vec<(f64, f64)>> {
    let text = std::fs::read_to_string(dir.join("plotdata.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("series,x,y"));
    let mut out: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for l in lines {
        let mut parts = l.rsplitn(3, ',');
        let y: f64 = parts.next().unwrap().parse().unwrap();
        let x: f64 = parts.next().unwrap().parse().unwrap();
        out.entry(parts.next().unwrap().to_string()).or_default().push((x, y));
    }
    out
}

#[test]
fn minimal_config_fills_defaults() {
    let cfg = RunConfig::from_toml_str("").unwrap();
    let setup = cfg.validate().unwrap();
    assert_eq!(cfg.physics.dim, 1);
    assert_eq!(cfg.grid.cells, vec![64]);
    assert_eq!(cfg.solver.kind, "smoluchowski");
    assert_eq!(setup.problem.params.epsilon(), 1.0);
    let cfg = RunConfig::from_toml_str("[physics]\nkbt = 4.0\nmass = 1.0\ngamma = 4.0").unwrap();
    assert_eq!(cfg.validate().unwrap().problem.params.epsilon(), 0.5);
    assert_eq!(cfg.physics.epsilon(), 0.5);
}

#[test]
fn unknown_family_lists_shipped_families() {
    let errors = config_errors("[kernels.z1]\nfamily = \"oseen_true\"\namplitude = 0.1");
    assert_eq!(errors.len(), 1, "{errors:?}");
    assert!(errors[0].contains("oseen_true"));
    for f in ["zero", "isotropic", "longitudinal"] {
        assert!(errors[0].contains(f), "{}", errors[0]);
    }
}

#[test]
fn every_validation_error_is_reported() {
    let text = "[physics]\ngamma = -1.0\n[grid]\ncells = [2]\n[solver]\nkind = \"magic\"\nrhs = \"old\"\n[kernels.v2]\nfamily = \"lennard_jones\"";
    let errors = config_errors(text);
    let joined = errors.join("\n");
    for needle in ["physics.gamma", "grid.cells[0]", "solver.kind", "solver.rhs", "lennard_jones"] {
        assert!(joined.contains(needle), "missing {needle} in {joined}");
    }
    assert!(joined.contains("admissible"));
}

#[test]
fn unknown_keys_are_errors() {
    assert!(!config_errors("[physics]\ntemperature = 1.0").is_empty());
    assert!(!config_errors("[solver]\nt_end = 1.0").is_empty());
    let errors = config_errors("[kernels.z1]\nfamily = \"isotropic\"\namplitude = 0.1\nwidth = 0.5\nrange = 2.0");
    assert!(errors.iter().any(|e| e.contains("unknown key 'range'")), "{errors:?}");
}

#[test]
fn missing_file_is_a_config_error() {
    match parse_config(Path::new("/nonexistent/overdamp.toml")) {
        Err(Error::Config(list)) => assert!(list[0].contains("cannot read")),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn shipped_configs_round_trip_canonically() {
    for path in shipped_paths() {
        let cfg = parse_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let once = cfg.to_canonical_toml().unwrap();
        let back = RunConfig::from_toml_str(&once).unwrap();
        assert_eq!(back, cfg, "{}", path.display());
        assert_eq!(back.to_canonical_toml().unwrap(), once, "{}", path.display());
    }
}

#[test]
fn stationary_boltzmann_run_writes_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(configs_dir().join("boltzmann_stationary.toml")).unwrap();
    let (code, msg) = run_in(tmp.path(), &text, RunOptions::default());
    assert_eq!(code, EXIT_OK, "{msg}");
    let summary = read_json(&tmp.path().join("summary.json"));
    assert!(summary["linf_change"].as_f64().unwrap() <= 1e-8);
    assert!(!tmp.path().join(PARTIAL_MARKER).exists());

    let manifest: RunManifest = serde_json::from_str(&std::fs::read_to_string(tmp.path().join(MANIFEST)).unwrap()).unwrap();
    let cfg = RunConfig::from_toml_str(&text).unwrap();
    let mut used = cfg.clone();
    used.output.dir = tmp.path().to_path_buf();
    assert_eq!(manifest.config_sha256, overdamp::analysis::digest(&used.to_canonical_toml().unwrap()));
    let mut on_disk: Vec<String> = std::fs::read_dir(tmp.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n != MANIFEST)
        .collect();
    on_disk.sort();
    assert_eq!(on_disk, manifest.files.keys().cloned().collect::<Vec<_>>());
    for (name, hash) in &manifest.files {
        let bytes = std::fs::read(tmp.path().join(name)).unwrap();
        let actual: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(&actual, hash, "{name}");
        if name.ends_with(".csv") {
            assert!(!bytes.contains(&b'\r'));
        }
    }
}

#[test]
fn inadmissible_friction_exits_with_config_code() {
    let tmp = tempfile::tempdir().unwrap();
    let text = "[kernels.z2]\nfamily = \"isotropic\"\namplitude = -3.0\nwidth = 0.8\ncutoff = 3.0\n[solver]\nt_final = 0.1";
    let (code, msg) = run_in(tmp.path(), text, RunOptions::default());
    assert_eq!(code, EXIT_CONFIG);
    assert!(msg.contains("positive definite"), "{msg}");
    assert!(tmp.path().join(PARTIAL_MARKER).exists());
}

#[test]
fn divergent_run_exits_with_numerical_code() {
    let tmp = tempfile::tempdir().unwrap();
    let text = "[solver]\nkind = \"kinetic\"\nt_final = 500.0\ndt = 0.5\nepsilon = 0.01\n[solver.initial]\nkind = \"sine\"";
    let (code, msg) = run_in(tmp.path(), text, RunOptions::default());
    assert_eq!(code, EXIT_NUMERICAL, "{msg}");
    let marker = std::fs::read_to_string(tmp.path().join(PARTIAL_MARKER)).unwrap();
    assert!(marker.contains("non-finite"));
    assert!(!tmp.path().join(MANIFEST).exists());
}

#[test]
fn failed_property_exits_with_property_code() {
    let tmp = tempfile::tempdir().unwrap();
    let mut text = std::fs::read_to_string(configs_dir().join("equilibrium.toml")).unwrap();
    text = text.replace("steps = 1000", "steps = 10");
    text.push_str("\n[tolerances]\nflux_null = 0.0\n");
    let (code, msg) = run_in(tmp.path(), &text, RunOptions { junit: true, ..Default::default() });
    assert_eq!(code, EXIT_PROPERTY, "{msg}");
    assert!(msg.contains("flux_ratio"));
    let xml = std::fs::read_to_string(tmp.path().join("report.junit.xml")).unwrap();
    assert!(xml.contains("failures=\"1\""));
    assert!(tmp.path().join(MANIFEST).exists());
}

#[test]
fn epsilon_study_reports_fitted_order() {
    let tmp = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(configs_dir().join("epsilon_linear.toml")).unwrap().replace("refine = true", "refine = false");
    let (code, msg) = run_in(tmp.path(), &text, RunOptions::default());
    assert_eq!(code, EXIT_OK, "{msg}");
    let report = read_json(&tmp.path().join("report.json"));
    let q = report["fits"]["deviation_l1"]["exponent"].as_f64().unwrap();
    assert!(q > 1.7, "q = {q}");
    assert!(report["fits"]["deviation_l1"]["ci_low"].as_f64().unwrap() <= q);
    let series = plot_series(tmp.path());
    assert_eq!(series["deviation_l1"].len(), 3);
    assert_eq!(series["fit_deviation_l1"].len(), 3);
}

#[test]
fn comparison_plotdata_has_one_series_per_formulation() {
    let tmp = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(configs_dir().join("compare_formulations.toml")).unwrap().replace("t_final = 0.5", "t_final = 0.1");
    let (code, msg) = run_in(tmp.path(), &text, RunOptions::default());
    assert_eq!(code, EXIT_OK, "{msg}");
    let series = plot_series(tmp.path());
    for f in ["new", "expanded", "rex_lowen"] {
        let s = &series[f];
        assert!(s.len() > 2);
        assert_eq!(s[0], (0.0, 0.0));
    }
}

#[test]
fn kinetic_plotdata_has_spectra_and_dump() {
    let tmp = tempfile::tempdir().unwrap();
    let text = "[solver]\nkind = \"kinetic\"\nt_final = 0.2\nnmax = 4\nepsilon = 0.2\nsnapshot_every = 5\n[grid]\nlengths = [8.0]\ncells = [16]\n[solver.initial]\nkind = \"sine\"";
    let (code, msg) = run_in(tmp.path(), text, RunOptions { dump_matrix: true, ..Default::default() });
    assert_eq!(code, EXIT_OK, "{msg}");
    let series = plot_series(tmp.path());
    let spectra: Vec<&String> = series.keys().filter(|k| k.starts_with("spectrum_t=")).collect();
    assert!(spectra.len() >= 2);
    assert!(spectra.iter().all(|k| series[*k].len() == 5));
    let dump = std::fs::read_to_string(tmp.path().join("fredholm_system.csv")).unwrap();
    assert!(dump.starts_with("kind,row,col,value"));
}

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_overdamp"))
}

#[test]
fn binary_check_and_exit_codes() {
    let ok = binary().args(["check", "--config"]).arg(configs_dir().join("spectral.toml")).output().unwrap();
    assert_eq!(ok.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("epsilon"));

    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "[kernels.g]\nfamily = \"hard_sphere\"").unwrap();
    let out = binary().args(["check", "--config"]).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(EXIT_CONFIG));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mean_field"));

    let out = binary().args(["study", "no_such_study", "--config"]).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(EXIT_CONFIG));
}

#[test]
fn binary_study_subcommand_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let out = binary()
        .args(["study", "spectral", "--junit", "--dump-matrix", "--seed", "9", "--config"])
        .arg(configs_dir().join("integral_pd.toml"))
        .arg("--out")
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&tmp.path().join("report.json"));
    assert_eq!(report["study"], "spectral");
    assert!(tmp.path().join("report.junit.xml").exists());
    assert!(tmp.path().join("linearized_operator.csv").exists());
    let manifest = read_json(&tmp.path().join(MANIFEST));
    assert_eq!(manifest["seed"], 9);
}

#[test]
fn langevin_output_is_independent_of_thread_count() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs_dir().join("langevin_ensemble.toml");
    let mut hashes = Vec::new();
    for threads in ["1", "3"] {
        let dir = tmp.path().join(threads);
        let out = binary()
            .args(["run", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&dir)
            .env("OVERDAMP_THREADS", threads)
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0));
        let manifest: RunManifest = serde_json::from_str(&std::fs::read_to_string(dir.join(MANIFEST)).unwrap()).unwrap();
        let first = std::fs::read_to_string(dir.join("snapshot_000.csv")).unwrap();
        assert!(first.starts_with("traj_id,particle_id,x\n"));
        hashes.push(manifest.files);
    }
    assert_eq!(hashes[0], hashes[1]);
}

#[test]
fn seed_override_changes_langevin_output() {
    let tmp = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(configs_dir().join("langevin_ensemble.toml")).unwrap();
    run_in(&tmp.path().join("a"), &text, RunOptions::default());
    run_in(&tmp.path().join("b"), &text, RunOptions { seed: Some(12), ..Default::default() });
    let a = std::fs::read(tmp.path().join("a/density.csv")).unwrap();
    let b = std::fs::read(tmp.path().join("b/density.csv")).unwrap();
    assert_ne!(a, b);
}
