use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn config_text(name: &str) -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(format!("{name}.toml"));
    fs::read_to_string(path).unwrap()
}

/// Writes `text` with each `(from, to)` replacement applied and returns its path.
fn write_config(dir: &Path, text: &str, edits: &[(&str, &str)]) -> PathBuf {
    let mut text = text.to_string();
    for (from, to) in edits {
        assert!(text.contains(from), "config has no '{from}'");
        text = text.replacen(from, to, 1);
    }
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path
}

fn qstrat(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qstrat"))
        .args(args)
        .arg("-c")
        .arg(config)
        .arg("-o")
        .arg(out)
        .arg("-q")
        .output()
        .unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Data rows of a CSV written by the CLI, header removed.
fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (header, rows)
}

fn column(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap()
}

const COARSE: &[(&str, &str)] = &[("spacing = 0.02", "spacing = 0.1")];

#[test]
fn missing_key_exits_one_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &config_text("radial"), &[("delta0 = 0.1\n", "")]);
    let out = qstrat(&["solve"], &cfg, &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("delta0"), "{err}");
}

#[test]
fn unknown_key_and_bad_values_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let text = config_text("radial");
    for edit in [("rho = 0.2", "rho = 0.2\nrh0 = 1.0"), ("t_a = 3.5", "t_a = 2.0"), ("target_dim = 3", "target_dim = 2")] {
        let cfg = write_config(dir.path(), &text, &[edit]);
        let out = qstrat(&["solve"], &cfg, &dir.path().join("out"));
        assert_eq!(out.status.code(), Some(1), "{edit:?}");
    }
}

#[test]
fn constant_scenario_solves_to_zero_energy_and_zero_theta() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let cfg = write_config(dir.path(), &config_text("constant"), COARSE);
    assert_eq!(qstrat(&["solve"], &cfg, &out_dir).status.code(), Some(0));
    let (header, rows) = csv_rows(&out_dir.join("energy_log.csv"));
    let e = column(&header, "energy");
    let last: f64 = rows.last().unwrap()[e].parse().unwrap();
    assert!(last.abs() <= 1e-12);
    assert_eq!(json(&out_dir.join("solve.json"))["final_energy"].as_f64(), Some(0.0));

    assert_eq!(qstrat(&["theta"], &cfg, &out_dir).status.code(), Some(0));
    let (header, rows) = csv_rows(&out_dir.join("theta.csv"));
    let t = column(&header, "theta");
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r[t].parse::<f64>().unwrap() == 0.0));
}

#[test]
fn radial_scenario_energy_is_near_eight_pi() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let cfg = write_config(dir.path(), &config_text("radial"), &[]);
    assert_eq!(qstrat(&["solve"], &cfg, &out_dir).status.code(), Some(0));
    let e = json(&out_dir.join("solve.json"))["unit_ball_energy"].as_f64().unwrap();
    let target = 8.0 * std::f64::consts::PI;
    assert!((e - target).abs() <= 0.05 * target, "{e}");
    let side = json(&out_dir.join("map.json"));
    assert_eq!(side["scenario"], "radial-p2");
    assert_eq!(side["singular_nodes"], 1);
}

#[test]
fn audit_of_a_line_measure_passes_with_ratio_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let cfg = write_config(dir.path(), &config_text("cylindrical"), COARSE);
    let measure = dir.path().join("line.csv");
    let mut text = String::from("x0,x1,x2,weight\n");
    for i in 0..40 {
        let t = -0.9 + 1.8 * i as f64 / 39.0;
        text.push_str(&format!("{},{},{},0.045\n", 0.3 * t, 0.4 * t, 0.5 * t));
    }
    fs::write(&measure, text).unwrap();
    let out = qstrat(&["audit", "--measure", measure.to_str().unwrap()], &cfg, &out_dir);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rep = json(&out_dir.join("audit.json"));
    assert_eq!(rep["verdict"], "pass");
    assert_eq!(rep["worst_ratio"].as_f64(), Some(0.0));
}

#[test]
fn snapshot_problems_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let cfg = write_config(dir.path(), &config_text("constant"), COARSE);
    // no snapshot yet
    assert_eq!(qstrat(&["theta"], &cfg, &out_dir).status.code(), Some(1));
    assert_eq!(qstrat(&["solve"], &cfg, &out_dir).status.code(), Some(0));
    // exponent of the snapshot differs from the config
    let other = dir.path().join("other");
    fs::create_dir_all(&other).unwrap();
    let text = config_text("constant").replace("spacing = 0.02", "spacing = 0.1").replace("p = 2.0", "p = 3.0");
    let cfg3 = other.join("p3.toml");
    fs::write(&cfg3, text).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_qstrat"))
        .args(["theta", "-q", "-c"])
        .arg(&cfg3)
        .arg("-o")
        .arg(&other)
        .arg("-s")
        .arg(out_dir.join("map.qsnap"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    // truncated snapshot
    let snap = out_dir.join("map.qsnap");
    let bytes = fs::read(&snap).unwrap();
    fs::write(&snap, &bytes[..bytes.len() / 2]).unwrap();
    assert_eq!(qstrat(&["theta"], &cfg, &out_dir).status.code(), Some(1));
}

#[test]
fn output_dir_falls_back_to_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let env_dir = dir.path().join("from-env");
    let cfg = write_config(dir.path(), &config_text("constant"), COARSE);
    let out = Command::new(env!("CARGO_BIN_EXE_qstrat"))
        .args(["solve", "-q", "-c"])
        .arg(&cfg)
        .env("QSTRAT_OUTPUT_DIR", &env_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(env_dir.join("map.qsnap").exists());
    assert!(env_dir.join("energy_log.csv").exists());
}

#[test]
fn full_pipeline_writes_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let cfg = write_config(dir.path(), &config_text("constant"), COARSE);
    for cmd in ["solve", "theta", "strata", "beta", "cover", "audit", "report"] {
        let out = qstrat(&[cmd], &cfg, &out_dir);
        assert_eq!(out.status.code(), Some(0), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
    for f in [
        "map.qsnap",
        "map.json",
        "solve.json",
        "energy_log.csv",
        "theta.csv",
        "strata.json",
        "beta.csv",
        "covering.json",
        "audit.json",
        "report.json",
        "theta_curves.csv",
        "minkowski.csv",
        "family_sums.csv",
    ] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
    let strata = json(&out_dir.join("strata.json"));
    assert_eq!(strata["schema_version"], 1);
    let rep = json(&out_dir.join("report.json"));
    assert_eq!(rep["schema_version"], 1);
}
