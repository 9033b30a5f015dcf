use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn caplab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_caplab")).args(args).output().expect("spawn caplab")
}

/// Runs a whitespace-separated command line; temp paths contain no spaces.
fn caplab_line(line: &str) -> Output {
    caplab(&line.split_whitespace().collect::<Vec<_>>())
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn region_file(dir: &Path) -> PathBuf {
    let p = dir.join("x.json");
    let text = r#"{"difference": [
        {"annulus": {"center": [0.0, 0.0], "inner": 0.015625, "outer": 1.0}},
        {"disk": {"center": [0.375, 0.0], "radius": 0.05}}
    ]}"#;
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn factorial_roadrunner_converges() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c.json");
    let o =
        caplab_line(&format!("criterion --roadrunner factorial --nmax 30 --p 2 --lambda 3 --t 1 --out {}", path(&out)));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v = read_json(&out);
    assert_eq!(v["verdict"], "Converges");
    assert_eq!(v["params"]["lambda"], 3.0);
}

#[test]
fn invalid_params_exit_2_and_write_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c.json");
    let o = caplab_line(&format!("criterion --roadrunner factorial --p 2 --lambda 5 --t 0 --out {}", path(&out)));
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
    assert!(!String::from_utf8_lossy(&o.stderr).is_empty());
}

#[test]
fn failure_leaves_existing_output_alone() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c.json");
    std::fs::write(&out, "keep").unwrap();
    let missing = dir.path().join("missing.json");
    let o = caplab_line(&format!("criterion --region {} --p 2 --lambda 3 --t 0 --out {}", path(&missing), path(&out)));
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(std::fs::read_to_string(&out).unwrap(), "keep");
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
}

#[test]
fn usage_errors_exit_3() {
    assert_eq!(caplab(&["frobnicate"]).status.code(), Some(3));
    assert_eq!(caplab(&["criterion", "--p", "2", "--lambda", "3", "--t", "0"]).status.code(), Some(3));
    assert_eq!(caplab(&["--help"]).status.code(), Some(0));
    assert_eq!(caplab(&["--version"]).status.code(), Some(0));
}

#[test]
fn seminorm_of_real_part() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.json");
    let o = caplab(&["seminorm", "--fn", "re_z", "--p", "2", "--lambda", "4", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(0));
    let v = read_json(&out)["estimate"]["value"].as_f64().unwrap();
    // (r^-4 int_{B_r} x^2)^(1/2) = sqrt(pi) / 2
    assert!((v - std::f64::consts::PI.sqrt() / 2.0).abs() < 1e-3, "{v}");
    // constants vanish identically
    let o = caplab(&["seminorm", "--fn", "const:3:-1", "--p", "1.5", "--lambda", "2.5", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(read_json(&out)["estimate"]["value"], 0.0);
}

#[test]
fn sweep_csv_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.csv");
    let o = caplab_line(&format!(
        "sweep --roadrunner factorial --nmax 30 --grid 2:3,1:1.5,2:5 --ts 0,1 --out {}",
        path(&out)
    ));
    assert_eq!(o.status.code(), Some(0));
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "p,lambda,t,verdict,sum_lower,sum_upper,ratio_limit");
    assert_eq!(lines.len(), 7);
    assert_eq!(lines.iter().filter(|l| l.contains("Converges")).count(), 4);

    let o = caplab(&["sweep", "--roadrunner", "factorial", "--grid", "", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 1);
}

#[test]
fn thread_count_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let region = region_file(dir.path());
    let mut runs = Vec::new();
    for threads in [None, Some("1")] {
        let out = dir.path().join(format!("c{}.json", runs.len()));
        let mut args = Vec::new();
        if let Some(t) = threads {
            args.extend(["--threads", t]);
        }
        args.extend(["criterion", "--region", path(&region), "--p", "2", "--lambda", "3", "--t", "0", "--depth", "6"]);
        args.extend(["--n-range", "1..4", "--out", path(&out)]);
        let o = caplab(&args);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        runs.push(std::fs::read(&out).unwrap());
    }
    assert_eq!(runs[0], runs[1]);
}
