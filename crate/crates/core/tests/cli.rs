use std::path::Path;
use std::process::{Command, Output};

fn flexctl(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flexctl"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

fn read(dir: &Path, path: &str) -> String {
    std::fs::read_to_string(dir.join(path)).unwrap()
}

#[test]
fn verify_default_config_passes() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "run.toml", "");
    let out = flexctl(dir.path(), &["verify", "--config", "run.toml", "--out", "v"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = read(dir.path(), "v/verify_report.csv");
    assert!(report.starts_with("check,value,threshold,status"));
    assert!(!report.contains(",fail"), "{report}");
    assert!(report.contains("smallness condition ratio"));
}

#[test]
fn simulate_without_steps_writes_initial_fields_only() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "run.toml", "[mesh]\nnx = 2\nny = 2\n[time]\nNt = 0\n");
    let out = flexctl(dir.path(), &["simulate", "--config", "run.toml", "--out", "s"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let mut vtk: Vec<String> = std::fs::read_dir(dir.path().join("s"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".vtk"))
        .collect();
    vtk.sort();
    assert_eq!(vtk, ["state_0.vtk"]);
}

#[test]
fn optimize_with_zero_targets_stops_immediately() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[mesh]\nnx = 3\nny = 3\n[time]\nNt = 4\n[cost]\nr1 = 0.0\nr2 = 0.0\n[output]\nformats = [\"csv\"]\n";
    write(dir.path(), "run.toml", cfg);
    let out = flexctl(dir.path(), &["optimize", "--config", "run.toml", "--out", "o"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = read(dir.path(), "o/summary.csv");
    assert!(summary.contains("iterations,1\n"), "{summary}");
    assert!(summary.contains("gap,0.0000000000000000e0\n"), "{summary}");
    assert!(summary.contains("termination,gap-tol\n"), "{summary}");
    assert_eq!(read(dir.path(), "o/cost_history.csv").lines().count(), 2);
}

#[test]
fn optimize_writes_history_and_fields() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "run.toml", "[mesh]\nnx = 4\nny = 4\n[time]\nNt = 5\nT = 0.25\n");
    let out = flexctl(dir.path(), &["optimize", "--config", "run.toml", "--out", "o"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["controls.csv", "cost_history.csv", "gap_history.csv", "switching.csv", "state_5.vtk", "adjoint_1.vtk"] {
        assert!(dir.path().join("o").join(f).exists(), "{f} missing");
    }
    let vtk = read(dir.path(), "o/adjoint_1.vtk");
    assert!(vtk.contains("VECTORS adjoint_velocity double"));
    assert!(vtk.contains("SCALARS adjoint_temperature double 1"));
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "run.toml", "[mesh]\nnx = 3\nny = 2\n[time]\nNt = 3\n");
    for out in ["a", "b"] {
        let o = flexctl(dir.path(), &["simulate", "--config", "run.toml", "--out", out]);
        assert_eq!(o.status.code(), Some(0));
    }
    for f in ["state_3.vtk", "controls.csv", "energy_report.csv", "summary.csv"] {
        assert_eq!(read(dir.path(), &format!("a/{f}")), read(dir.path(), &format!("b/{f}")), "{f}");
    }
}

#[test]
fn configuration_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("[physics]\nviscocity = 1.0\n", "physics.viscocity"),
        ("[bounds]\nalpha2 = 0.0\n", "bounds.alpha2"),
        ("[mesh]\nnx = = 2\n", "line 2"),
    ];
    for (i, (text, needle)) in cases.iter().enumerate() {
        let name = format!("bad{i}.toml");
        write(dir.path(), &name, text);
        let out = flexctl(dir.path(), &["simulate", "--config", &name]);
        assert_eq!(out.status.code(), Some(2));
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains(needle), "{err}");
    }
    let out = flexctl(dir.path(), &["verify", "--config", "missing.toml"]);
    assert_eq!(out.status.code(), Some(2));
}
