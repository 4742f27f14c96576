use std::path::{Path, PathBuf};

use expo_core::config::Config;
use expo_core::harness::{run_config, Command, Study};

fn load(name: &str, overrides: &[&str]) -> Config {
    let path: PathBuf = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(format!("{name}.json"));
    let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    Config::load(&path, &o).unwrap()
}

fn check<'a>(s: &'a expo_core::harness::Summary, name: &str) -> &'a expo_core::evaluate::Check {
    s.checks
        .iter()
        .find(|c| c.name.starts_with(name))
        .unwrap_or_else(|| panic!("no check {name} in {:?}", s.checks))
}

#[test]
fn every_command_runs_on_the_one_state_model() {
    let cfg = load("single_state", &["numerics.paths=200", "numerics.grid_cells=8", "study.m_list=[10, 100]"]);
    let commands = [
        Command::Validate,
        Command::Simulate,
        Command::Solve { m: None },
        Command::Solve { m: Some(10.0) },
        Command::Evaluate,
        Command::Study(Study::Dpp),
        Command::Study(Study::EpsOpt),
        Command::Study(Study::Continuity),
        Command::ProbeBounds,
    ];
    for c in commands {
        let dir = tempfile::tempdir().unwrap();
        let s = run_config(&c, &cfg, 5, dir.path()).unwrap_or_else(|e| panic!("{}: {e}", c.name()));
        assert!(s.passed, "{}: {:?}", c.name(), s.checks);
        assert!(dir.path().join("summary.json").exists());
        for f in &s.outputs {
            assert!(dir.path().join(f).exists(), "{} did not write {f}", c.name());
        }
    }
}

#[test]
fn evaluate_policies_on_the_baseline() {
    let dir = tempfile::tempdir().unwrap();
    for (policy, extra) in [("myopic", None), ("constant", Some("study.strategy=[1.0]")), ("grid", None)] {
        let mut o = vec!["numerics.paths=300", "numerics.grid_cells=20"];
        let p = format!("study.policy=\"{policy}\"");
        o.push(&p);
        o.extend(extra);
        let cfg = load("baseline", &o);
        let s = run_config(&Command::Evaluate, &cfg, 3, dir.path()).unwrap();
        assert!(check(&s, "pathwise bounds").passed);
        let r = s.results["reward"]["mean"].as_f64().unwrap();
        assert!(r > 0.9 && r < 1.1, "{policy}: {r}");
    }
    let cfg = load("baseline", &["study.policy=\"oracle\""]);
    let err = run_config(&Command::Evaluate, &cfg, 3, dir.path()).unwrap_err();
    assert_eq!(err.kind(), "ConfigError");
}

#[test]
fn start_state_outside_the_simplex_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = load("baseline", &["study.pi=[1.5]"]);
    let err = run_config(&Command::Solve { m: None }, &cfg, 1, dir.path()).unwrap_err();
    assert!(err.to_string().contains("study.pi"));
}

#[test]
fn long_csv_has_the_plotting_layout() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = load("frozen", &["numerics.paths=200", "study.m_list=[10, 100]"]);
    run_config(&Command::Study(Study::L2), &cfg, 2, dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join("study_l2.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("study,m,metric,value,stderr"));
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(first[..3], ["l2", "10", "sup_sq_h1"]);
}
