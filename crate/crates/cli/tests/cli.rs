use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use hfscat_cli::config::RunConfig;
use hfscat_cli::output::Manifest;
use hfscat_core::Model;

fn hfscat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hfscat"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn small_config(dir: &Path) -> String {
    let mut cfg = RunConfig::template(Model::Rh);
    cfg.sweeps.gamma.nodes = 5;
    cfg.sweeps.speeds = vec![0.5, 1.0];
    let path = dir.join("config.json");
    fs::write(&path, cfg.to_json()).unwrap();
    path.display().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn gen_config_prints_a_valid_template() {
    for t in ["rh", "hartree", "hf"] {
        let o = hfscat(&["gen-config", "--template", t]);
        assert!(o.status.success(), "{}", stderr(&o));
        RunConfig::from_json(&String::from_utf8(o.stdout).unwrap()).unwrap();
    }
}

#[test]
fn propagator_suite_passes_and_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("out");
    let o = hfscat(&["--config", &cfg, "--out", out.to_str().unwrap(), "validate", "--suite", "propagator"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 4, "{text}");
    let report = fs::read_to_string(out.join("validate_propagator.json")).unwrap();
    assert!(report.contains("\"config_hash\""));
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.files["validate_propagator.json"].subcommand, "validate");
}

#[test]
fn missing_grid_size_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let mut v: serde_json::Value =
        serde_json::from_str(&RunConfig::template(Model::Rh).to_json()).unwrap();
    v["grid"].as_object_mut().unwrap().remove("M");
    let path = dir.path().join("bad.json");
    fs::write(&path, v.to_string()).unwrap();
    let o = hfscat(&["--config", path.to_str().unwrap(), "kernel"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("grid"), "{}", stderr(&o));
    assert!(stderr(&o).contains("`M`"), "{}", stderr(&o));
}

#[test]
fn usage_errors() {
    let o = hfscat(&["kernel"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let o = hfscat(&["--config", &cfg, "--out", dir.path().to_str().unwrap(), "validate", "--suite", "nope"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn missing_inputs_exit_with_code_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("empty");
    for cmd in ["invert", "report"] {
        let o = hfscat(&["--config", &cfg, "--out", out.to_str().unwrap(), cmd]);
        assert_eq!(o.status.code(), Some(1), "{cmd}: {}", stderr(&o));
    }
}

#[test]
fn overlapping_probe_bands_exit_with_code_4() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::template(Model::Rh);
    cfg.uniqueness.centers = vec![vec![-0.2], vec![0.2]];
    let path = dir.path().join("config.json");
    fs::write(&path, cfg.to_json()).unwrap();
    let o = hfscat(&["--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "uniqueness"]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

fn run_pipeline(cfg: &str, out: &Path, extra: &[&str]) {
    for cmd in ["kernel", "forward", "invert", "report"] {
        let mut args = vec!["--config", cfg, "--out", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        args.push(cmd);
        let o = hfscat(&args);
        assert!(o.status.success(), "{cmd}: {}", stderr(&o));
    }
}

#[test]
fn pipeline_outputs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run_pipeline(&cfg, &a, &[]);
    run_pipeline(&cfg, &b, &["--threads", "1"]);
    let manifest: Manifest =
        serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    for name in [
        "kernel.bin",
        "kernel.json",
        "forward.json",
        "forward.csv",
        "reconstruction.bin",
        "reconstruction.csv",
        "picard.csv",
        "invert_summary.json",
        "vhat.svg",
    ] {
        assert!(manifest.files.contains_key(name), "{name} missing from manifest");
    }
    for name in manifest.files.keys().chain(std::iter::once(&"manifest.json".to_string())) {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name} differs");
    }
    let csv = fs::read_to_string(a.join("reconstruction.csv")).unwrap();
    assert!(csv.starts_with(&format!("# config_sha256={}\n", manifest.config_hash)));
    assert!(csv.lines().count() > 3);
}
