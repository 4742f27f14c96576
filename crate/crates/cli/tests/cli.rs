use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(format!("{name}.json"))
}

fn expo(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_expo"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stderr).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stderr)))
}

#[test]
fn missing_sigma_exits_2_and_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = json(&config("baseline"));
    cfg["model"].as_object_mut().unwrap().remove("sigma");
    let path = dir.path().join("broken.json");
    fs::write(&path, cfg.to_string()).unwrap();
    let o = expo(&["validate", "--config", path.to_str().unwrap()], &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    let err = stderr_json(&o);
    assert_eq!(err["kind"], "ConfigError");
    assert!(err["message"].as_str().unwrap().contains("sigma"));
    assert_eq!(json(&dir.path().join("out/error.json")), err);
}

#[test]
fn invalid_parameter_lists_violations() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("baseline");
    let o = expo(
        &["validate", "--config", cfg.to_str().unwrap(), "--set", "model.lambda=-1"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    let err = stderr_json(&o);
    assert_eq!(err["kind"], "ConfigError");
    assert!(err["violations"].as_array().unwrap().iter().any(|v| v["field"] == "lambda"));
}

#[test]
fn too_few_time_steps_is_a_cfl_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("baseline");
    let o = expo(
        &["solve", "--config", cfg.to_str().unwrap(), "--set", "numerics.time_steps=5"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["kind"], "CflError");
}

#[test]
fn solve_on_one_state_reports_closed_form_match() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("single_state");
    let o = expo(&["solve", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let summary = json(&dir.path().join("summary.json"));
    let check = summary["checks"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["name"] == "closed-form match")
        .expect("closed-form check present");
    assert_eq!(check["passed"], true);
    assert!(summary["results"]["closed_form_rel_error"].as_f64().unwrap() < 1e-3);
    for f in ["value.csv", "value.json", "solve.csv", "meta.json"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
}

#[test]
fn frozen_l2_study_has_slope_minus_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("frozen");
    let o = expo(
        &["study", "l2", "--config", cfg.to_str().unwrap(), "--set", "numerics.paths=400"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let summary = json(&dir.path().join("summary.json"));
    let strategies = summary["results"]["strategies"].as_array().unwrap();
    assert_eq!(strategies.len(), 3);
    for s in strategies {
        let slope = s["slope"].as_f64().unwrap();
        assert!((slope + 1.0).abs() < 1e-9, "slope {slope}");
    }
}

#[test]
fn summary_carries_version_and_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("baseline");
    let o = expo(
        &["validate", "--config", cfg.to_str().unwrap(), "--set", "numerics.paths=123"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    let summary = json(&dir.path().join("summary.json"));
    assert!(!summary["version"].as_str().unwrap().is_empty());
    assert_eq!(summary["config"]["numerics"]["paths"], 123);
    assert_eq!(summary["config"]["model"]["theta"], 0.5);
    let meta = json(&dir.path().join("meta.json"));
    assert_eq!(meta["overrides"][0], "numerics.paths=123");
    assert_eq!(meta["config"], summary["config"]);
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv" || x == "bin"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn identical_config_and_seed_give_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("baseline");
    let cfg = cfg.to_str().unwrap();
    let runs: [&[&str]; 3] = [
        &["simulate", "--config", cfg, "--set", "numerics.paths=300", "--seed", "11"],
        &["evaluate", "--config", cfg, "--set", "numerics.paths=300", "--set", "numerics.grid_cells=20", "--seed", "11"],
        &["study", "moments", "--config", cfg, "--set", "numerics.paths=300", "--seed", "11"],
    ];
    for (i, args) in runs.iter().enumerate() {
        let a = dir.path().join(format!("{i}a"));
        let b = dir.path().join(format!("{i}b"));
        assert!(expo(args, &a).status.success());
        assert!(expo(args, &b).status.success());
        let (fa, fb) = (csv_files(&a), csv_files(&b));
        assert!(!fa.is_empty());
        assert_eq!(fa, fb, "outputs of {args:?} differ");
    }
    // A different seed changes the simulated paths.
    let c = dir.path().join("0c");
    let mut args = runs[0].to_vec();
    *args.last_mut().unwrap() = "12";
    assert!(expo(&args, &c).status.success());
    let same = csv_files(&dir.path().join("0a")).into_iter().find(|f| f.0 == "filter.csv").unwrap();
    let other = csv_files(&c).into_iter().find(|f| f.0 == "filter.csv").unwrap();
    assert_ne!(same, other);
}
