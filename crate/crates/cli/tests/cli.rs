use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use switchsde_cli::runner::MANIFEST_NAME;
use switchsde_cli::{load_config, parse_config, run_experiment, validate, Pipeline, RunManifest};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_switchsde"));
    c.env_remove(switchsde_cli::OUT_ENV);
    c
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p
}

fn read_manifest(dir: &Path) -> RunManifest {
    serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_NAME)).unwrap()).unwrap()
}

#[test]
fn shipped_configs_load_and_round_trip() {
    for name in ["kalman.toml", "two_regime.toml", "tabulated.toml"] {
        let loaded = load_config(&configs_dir().join(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
        let text = switchsde_cli::config::to_toml(&loaded.config);
        let again = parse_config(&text).unwrap();
        assert_eq!(again, loaded.config, "{name}");
    }
}

#[test]
fn no_arguments_prints_usage_and_exits_2() {
    let out = bin().output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn unknown_subcommand_exits_2() {
    let out = bin().arg("integrate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_alpha_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[levy]\nalpha = 2.5\n");
    let out = bin().args(["simulate", "--config"]).arg(&cfg).arg("--out").arg(dir.path().join("o")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("levy.alpha") && err.contains("alpha must lie in (0,2)"), "{err}");
}

#[test]
fn unknown_key_is_rejected_by_binary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[model]\nname = \"kalman\"\nsigma_matrix_typo = [[1.0]]\n");
    let out = bin().args(["simulate", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sigma_matrix_typo"));
}

#[test]
fn hormander_on_kalman_reports_one() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = bin().args(["hormander", "--config"]).arg(configs_dir().join("kalman.toml")).arg("--out").arg(&out_dir).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(out_dir.join("kappa.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("depth,kappa,holds"));
    let last: Vec<&str> = lines.last().unwrap().split(',').collect();
    assert_eq!(last[0], "2");
    assert!((last[1].parse::<f64>().unwrap() - 1.0).abs() < 1e-6);
    assert_eq!(last[2], "true");
    let m = read_manifest(&out_dir);
    assert_eq!(m.status, "ok");
    assert_eq!(m.summary("hormander").unwrap().values["holds"], serde_json::json!(true));
}

#[test]
fn decompose_check_on_stable_writes_ks_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "seed = 5\n[levy]\nalpha = 1.0\n[model]\ndimension = 2\n");
    let out_dir = dir.path().join("out");
    let out = bin().args(["decompose-check", "--config"]).arg(&cfg).arg("--out").arg(&out_dir).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(out_dir.join("decompose.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "coordinate,statistic,p_value");
    assert_eq!(lines.len(), 3);
    let m = read_manifest(&out_dir);
    assert_eq!(m.summary("decompose").unwrap().values["large_jump_rate"], serde_json::json!(2.0));
}

#[test]
fn zero_paths_gives_header_only_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let text =
        "paths = 0\n[model]\nname = \"kalman\"\n[diagnostics.flows]\n[diagnostics.tails]\n[diagnostics.norris]\n[diagnostics.gradrep]\n[diagnostics.density]\n";
    let cfg = write_config(dir.path(), text);
    let out_dir = dir.path().join("out");
    let out = bin().args(["run", "--config"]).arg(&cfg).arg("--out").arg(&out_dir).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let m = read_manifest(&out_dir);
    assert_eq!(m.status, "ok");
    for f in ["terminal.csv", "flows.csv", "tail.csv", "neg_moment.csv", "norris.csv", "gradrep.csv", "density.csv"] {
        let body = fs::read_to_string(out_dir.join(f)).unwrap();
        assert_eq!(body.lines().count(), 1, "{f} should hold only its header");
        assert!(m.files.iter().any(|e| e.path == f), "{f} missing from inventory");
    }
    assert_eq!(m.summary("tails").unwrap().status, "skipped");
}

#[test]
fn worker_count_does_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let text = "seed = 21\npaths = 1000\nexport_paths = 3\n[model]\nname = \"two_regime_linear\"\n[diagnostics.flows]\n[diagnostics.tails]\n[diagnostics.norris]\n[diagnostics.hormander]\nx_samples = 32\nsphere_samples = 32\n";
    let loaded = validate(parse_config(text).unwrap(), dir.path()).unwrap();
    let pipes = Pipeline::from_config(&loaded.config);
    let a = run_experiment(&loaded, &pipes, &dir.path().join("w1"), 1).unwrap();
    let b = run_experiment(&loaded, &pipes, &dir.path().join("w8"), 8).unwrap();
    assert_eq!(a.config_sha256, b.config_sha256);
    assert!(!a.files.is_empty());
    assert_eq!(a.digests(), b.digests());
}

#[test]
fn different_seeds_change_paths_not_schema() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "paths = 4\nexport_paths = 4\n[model]\nname = \"kalman\"\n");
    let mut bodies = Vec::new();
    for seed in ["1", "2"] {
        let out_dir = dir.path().join(format!("s{seed}"));
        let out = bin().args(["simulate", "--seed", seed, "--config"]).arg(&cfg).arg("--out").arg(&out_dir).output().unwrap();
        assert_eq!(out.status.code(), Some(0));
        bodies.push(fs::read_to_string(out_dir.join("paths/path_00000.csv")).unwrap());
    }
    assert_ne!(bodies[0], bodies[1]);
    assert_eq!(bodies[0].lines().next(), Some("t,S,alpha,x1,x2"));
    assert_eq!(bodies[0].lines().next(), bodies[1].lines().next());
}

#[test]
fn rerun_is_bit_identical_and_env_sets_out() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "paths = 20\n[model]\nname = \"sin_bounded\"\n[diagnostics.flows]\n");
    let mut digests = Vec::new();
    for k in 0..2 {
        let out_dir = dir.path().join(format!("env{k}"));
        let out = bin().args(["flows", "--config"]).arg(&cfg).env(switchsde_cli::OUT_ENV, &out_dir).output().unwrap();
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        digests.push(read_manifest(&out_dir).digests());
    }
    assert_eq!(digests[0], digests[1]);
}

#[test]
fn runtime_failure_records_partial_manifest() {
    let dir = tempfile::tempdir().unwrap();
    // Too few samples for a tail estimate.
    let cfg = write_config(dir.path(), "paths = 10\n[model]\nname = \"kalman\"\n[diagnostics.tails]\n");
    let out_dir = dir.path().join("out");
    let out = bin().args(["run", "--config"]).arg(&cfg).arg("--out").arg(&out_dir).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let m = read_manifest(&out_dir);
    assert_eq!(m.status, "failed");
    assert_eq!(m.summary("simulate").unwrap().status, "ok");
    assert_eq!(m.summary("tails").unwrap().status, "failed");
    assert!(m.files.iter().any(|f| f.path == "terminal.csv"));
}

#[test]
fn tabulated_measure_runs() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = bin().args(["decompose-check", "--config"]).arg(configs_dir().join("tabulated.toml")).arg("--out").arg(&out_dir).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read_manifest(&out_dir).status, "ok");
}
