use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn kinv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kinv"))
        .args(args)
        .env("KINV_LOG", "off")
        .output()
        .unwrap()
}

fn config(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn manifest(out: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap()
}

fn out_dir(dir: &Path, name: &str) -> (PathBuf, String) {
    let p = dir.join(name);
    let s = p.to_string_lossy().into_owned();
    (p, s)
}

const SMALL_INVERSE: &str = r#"{
  "geometry": { "L": 1.0, "v0": 1.0, "v1": 2.0, "T": 1.5 },
  "grid": { "Nx": 8, "Nv": 4, "Nt": 8 },
  "mode": "inverse_source",
  "coefficients": {
    "J": "0.2", "g": "exp(-t)",
    "alpha": { "family": "softabs", "c": 0.1 },
    "Q": [{ "q1": "0.2", "q2": "cos(x)" }]
  },
  "data": { "psi": "sin(pi*x)*(1 + 0.1*v)" }
}"#;

#[test]
fn zero_forward_writes_zero_norms_and_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let (out, outs) = out_dir(dir.path(), "fwd");
    let o = kinv(&["forward", "--config", &config("forward_zero.json"), "--out", &outs]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let norms: Value = serde_json::from_str(&std::fs::read_to_string(out.join("norms.json")).unwrap()).unwrap();
    for (_, v) in norms.as_object().unwrap() {
        if let Some(x) = v.as_f64() {
            assert_eq!(x, 0.0);
        }
    }
    let m = manifest(&out);
    assert_eq!(m["exit_status"], "ok");
    let arts = m["artifact_list"].as_array().unwrap();
    assert!(!arts.is_empty());
    for a in arts {
        assert!(out.join(a.as_str().unwrap()).is_file(), "{a}");
    }
}

#[test]
fn missing_grid_is_a_validation_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "bad.json",
        r#"{ "geometry": { "L": 1, "v0": 1, "v1": 2, "T": 2 }, "mode": "forward" }"#,
    );
    let (out, outs) = out_dir(dir.path(), "o");
    let o = kinv(&["forward", "--config", &cfg, "--out", &outs]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("grid"));
    assert_eq!(manifest(&out)["exit_status"], "validation_failed");
}

#[test]
fn psi_on_inflow_boundary_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", &SMALL_INVERSE.replace("sin(pi*x)", "(1 + x)"));
    let (_, outs) = out_dir(dir.path(), "o");
    let o = kinv(&["inverse", "--config", &cfg, "--out", &outs]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_config_file_is_an_io_failure() {
    let dir = tempfile::tempdir().unwrap();
    let (out, outs) = out_dir(dir.path(), "o");
    let o = kinv(&["forward", "--config", "/nonexistent/kinv.json", "--out", &outs]);
    assert_eq!(o.status.code(), Some(4));
    assert_eq!(manifest(&out)["exit_status"], "io_failed");
}

#[test]
fn newton_leaving_the_basin_is_a_solver_failure() {
    let dir = tempfile::tempdir().unwrap();
    let (out, outs) = out_dir(dir.path(), "o");
    let o = kinv(&["inverse", "--config", &config("basin_large.json"), "--out", &outs]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(manifest(&out)["exit_status"], "solver_failed");
    let o = kinv(&["inverse", "--config", &config("basin_small.json"), "--out", &outs]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn inverse_writes_history() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", SMALL_INVERSE);
    let (out, outs) = out_dir(dir.path(), "o");
    let o = kinv(&["inverse", "--config", &cfg, "--out", &outs]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let hist = std::fs::read_to_string(out.join("residual_history.csv")).unwrap();
    assert!(hist.starts_with("iteration,residual\n0,"));
    let newton: Value = serde_json::from_str(&std::fs::read_to_string(out.join("newton.json")).unwrap()).unwrap();
    assert_eq!(newton["converged"], true);
    assert_eq!(hist.lines().count(), newton["iterations"].as_u64().unwrap() as usize + 2);
}

#[test]
fn verify_suites_pass() {
    let dir = tempfile::tempdir().unwrap();
    for (suite, cfg) in [
        ("alpha", None),
        ("oracle", Some(config("oracle_tiny.json"))),
        ("stability", Some(config("stability.json"))),
    ] {
        let (out, outs) = out_dir(dir.path(), suite);
        let mut args = vec!["verify", "--suite", suite, "--out", &outs];
        if let Some(c) = &cfg {
            args.extend(["--config", c.as_str()]);
        }
        let o = kinv(&args);
        assert_eq!(o.status.code(), Some(0), "{suite}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(out.join("verify.json").is_file());
    }
}

#[test]
fn unknown_suite_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = kinv(&["verify", "--suite", "bogus", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn artifacts_are_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", SMALL_INVERSE);
    let runs: Vec<PathBuf> = ["1", "4", "4"]
        .iter()
        .enumerate()
        .map(|(n, t)| {
            let (out, outs) = out_dir(dir.path(), &format!("run{n}"));
            let o = kinv(&["--threads", t, "inverse", "--config", &cfg, "--out", &outs]);
            assert_eq!(o.status.code(), Some(0));
            out
        })
        .collect();
    let arts = manifest(&runs[0])["artifact_list"].as_array().unwrap().clone();
    for a in &arts {
        let name = a.as_str().unwrap();
        let first = std::fs::read(runs[0].join(name)).unwrap();
        for r in &runs[1..] {
            assert_eq!(first, std::fs::read(r.join(name)).unwrap(), "{name} differs");
        }
    }
}
