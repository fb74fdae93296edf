use std::path::Path;
use std::process::{Command, Output};

use mfbm_cli::{Manifest, EXIT_CONFIG, EXIT_OK, SEED_ENV};

const SMALL: &str = r#"
seed = 5
replicas = 4

[space]
eigenvalues = [1.0]

[noise]
hurst = 0.7

[family]
name = "linear_dissipative"
params = { b_y = 1.0, c = 0.5 }

[grid]
steps = 32

[scales]
epsilon = [0.1, 0.1]
delta = [1e-2, 1e-3]
"#;

fn mfbm(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mfbm"));
    cmd.args(args).env_remove(SEED_ENV);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn run_ok(args: &[&str], envs: &[(&str, &str)]) {
    let o = mfbm(args, envs);
    assert_eq!(o.status.code(), Some(EXIT_OK), "{}", stderr(&o));
}

#[test]
fn usage_errors_and_help() {
    assert_eq!(mfbm(&["--help"], &[]).status.code(), Some(EXIT_OK));
    assert_eq!(mfbm(&["average", "--bogus"], &[]).status.code(), Some(EXIT_CONFIG));
    let missing = mfbm(&["average", "--config", "/nonexistent/x.toml"], &[]);
    assert_eq!(missing.status.code(), Some(EXIT_CONFIG));
    assert!(stderr(&missing).contains("cannot read config"));
}

#[test]
fn invalid_configurations_name_the_offending_field() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        (SMALL.replace("hurst = 0.7", "hurst = 0.5"), "noise.hurst"),
        (SMALL.replace("hurst = 0.7", "hurst = 0.7\nalpha = 0.2"), "(0.3, 0.5)"),
        (SMALL.replace("delta = [1e-2, 1e-3]", "delta = [1e-2, 1e-3]\nblock = 0.001"), "smaller than the grid step"),
        (SMALL.replace("replicas = 4", "replicas = 4\ncolour = 1"), "colour"),
    ];
    for (i, (text, needle)) in cases.iter().enumerate() {
        let cfg = write_config(dir.path(), &format!("bad{i}.toml"), text);
        let out = dir.path().join(format!("out{i}"));
        let o = mfbm(&["average", "--config", &cfg, "--out", out.to_str().unwrap()], &[]);
        assert_eq!(o.status.code(), Some(EXIT_CONFIG), "case {i}");
        assert!(stderr(&o).contains(needle), "case {i}: {}", stderr(&o));
    }
}

#[test]
fn manifest_lists_every_output_with_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();
    run_ok(&["average", "--config", &cfg, "--out", out_s], &[]);
    run_ok(&["simulate", "--config", &cfg, "--out", out_s], &[]);
    let m = Manifest::read(&out).unwrap();
    assert_eq!(m.runs.len(), 2);
    let mut listed: Vec<String> = m.outputs().iter().map(|s| s.to_string()).collect();
    listed.sort();
    let mut on_disk: Vec<String> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n != "manifest.json")
        .collect();
    on_disk.sort();
    assert_eq!(listed, on_disk);
    let avg = &m.runs[0];
    assert_eq!(avg.command, "average");
    assert_eq!(avg.seed, 5);
    assert_eq!(avg.seed_source, "config");
    assert_eq!(avg.config_hash.as_deref().map(str::len), Some(64));
    // defaults are echoed in the effective configuration
    let c = avg.config.as_ref().unwrap();
    assert_eq!(c["grid"]["horizon"], 1.0);
    assert_eq!(c["initial"]["x0"], serde_json::json!([1.0]));
    assert_eq!(c["scale_pairs"][1]["delta_over_epsilon"], 1e-2);
    // a rerun moves the outputs to the newest record
    run_ok(&["average", "--config", &cfg, "--out", out_s], &[]);
    let m = Manifest::read(&out).unwrap();
    assert_eq!(m.runs.len(), 2);
    assert_eq!(m.runs.last().unwrap().command, "average");
}

#[test]
fn seed_precedence_is_config_then_env_then_flag() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    let sweep = |sub: &str, extra: &[&str], envs: &[(&str, &str)]| {
        let out = dir.path().join(sub);
        let mut args = vec!["average", "--config", &cfg, "--out", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        run_ok(&args, envs);
        let m = Manifest::read(&out).unwrap();
        let r = m.runs.last().unwrap();
        (r.seed, r.seed_source.clone(), std::fs::read(out.join("sweep.csv")).unwrap())
    };
    let (s0, src0, a) = sweep("a", &[], &[]);
    let (_, _, a2) = sweep("a2", &[], &[]);
    let (s1, src1, b) = sweep("b", &[], &[(SEED_ENV, "99")]);
    let (s2, src2, c) = sweep("c", &["--seed", "99"], &[(SEED_ENV, "12")]);
    assert_eq!((s0, src0.as_str()), (5, "config"));
    assert_eq!((s1, src1.as_str()), (99, "env"));
    assert_eq!((s2, src2.as_str()), (99, "flag"));
    assert_eq!(a, a2);
    assert_ne!(a, b);
    assert_eq!(b, c);
}

#[test]
fn rate_of_the_averaged_trajectory_is_near_zero() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL.replace("steps = 32", "steps = 256").replace("replicas = 4", "replicas = 0");
    let cfg = write_config(dir.path(), "small.toml", &text);
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();
    run_ok(&["average", "--config", &cfg, "--out", out_s], &[]);
    let xbar = out.join("xbar.csv");
    run_ok(&["rate", "--config", &cfg, "--out", out_s, "--phi", xbar.to_str().unwrap()], &[]);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("rate.json")).unwrap()).unwrap();
    let rate = report["rate"].as_f64().unwrap();
    assert!(rate.abs() < 1e-3, "{rate}");
}

#[test]
fn kernel_selftest_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("k");
    run_ok(&["kernel-selftest", "--out", out.to_str().unwrap(), "--points", "20"], &[]);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("kernel_selftest.json")).unwrap()).unwrap();
    assert_eq!(report["points"], 20);
}

#[test]
fn shipped_configurations_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "toml") {
            let mut cfg = mfbm_cli::load_config(&p).unwrap();
            cfg.validate().unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        }
    }
}
