use std::path::{Path, PathBuf};

use expo_core::config::Config;
use expo_core::hjb::{solve_hjb, HjbGrid};
use expo_core::simulation::simulate_market_path;
use expo_core::{Error, Model64};

fn path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(format!("{name}.json"))
}

fn build_with(overrides: &[&str]) -> Result<Model64, Error> {
    let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    Config::load(&path("baseline"), &o)?.build()
}

fn violation_fields(overrides: &[&str]) -> Vec<String> {
    match build_with(overrides) {
        Err(Error::Validation(r)) => r.violations.into_iter().map(|v| v.field).collect(),
        other => panic!("expected a validation error for {overrides:?}, got {other:?}"),
    }
}

#[test]
fn shipped_configs_are_valid() {
    for name in ["baseline", "single_state", "three_state", "frozen"] {
        let cfg = Config::load(&path(name), &[]).unwrap();
        let m: Model64 = cfg.build().unwrap();
        assert_eq!(m.states(), cfg.model.prior.len());
        assert!(m.eps > 0.0 && m.eps <= m.eps_max);
        assert!(m.k_vertices.iter().all(|v| m.constraints.contains(v)));
    }
}

#[test]
fn invalid_parameters_name_their_field() {
    assert_eq!(violation_fields(&["model.theta=1"]), ["theta"]);
    assert_eq!(violation_fields(&["model.theta=0"]), ["theta"]);
    assert_eq!(violation_fields(&["model.lambda=-0.5"]), ["lambda"]);
    assert_eq!(violation_fields(&["model.horizon=0"]), ["horizon"]);
    assert_eq!(violation_fields(&["model.sigma.0.0=0"]), ["sigma"]);
    assert_eq!(violation_fields(&["model.prior=[0.7, 0.7]"]), ["prior"]);
    assert!(violation_fields(&["model.generator.0.1=2"]).iter().all(|f| f == "generator row 1"));
    assert_eq!(violation_fields(&["model.drift=[[0.1, 0.2, 0.3]]"]), ["drift"]);
}

#[test]
fn several_violations_are_reported_together() {
    let fields = violation_fields(&["model.theta=2", "model.lambda=-1"]);
    assert!(fields.contains(&"theta".to_string()) && fields.contains(&"lambda".to_string()));
}

#[test]
fn malformed_configs_are_config_errors() {
    match build_with(&["constraints.rows=[]"]) {
        Err(e) => assert_eq!(e.kind(), "ConfigError"),
        Ok(_) => panic!("mixed constraint forms must be rejected"),
    }
    let err = Config::load(&path("baseline"), &["model.unknown=1".into()]).unwrap_err();
    assert!(err.to_string().contains("unknown"));
}

#[test]
fn single_precision_builds_and_runs() {
    let cfg = Config::load(&path("baseline"), &[]).unwrap();
    let m = cfg.build::<f32>().unwrap();
    let b = simulate_market_path(&m, 1e-2f32, 1, 0).unwrap();
    for p in &b.filter_path {
        let s: f32 = p.as_slice().iter().sum();
        assert!((s - 1.0).abs() < 1e-5);
    }
    let vg = solve_hjb(&m, &HjbGrid::new(10), None).unwrap();
    assert!((vg.value_at(0.0, &[0.5]) - 1.0195).abs() < 0.01);
}
