use super::*;
use crate::control::Strategy;
use crate::hjb::{solve_hjb, HjbGrid};
use crate::testing::{config, model};

fn sim(paths: usize) -> SimSpec {
    SimSpec {
        dt: 0.01,
        paths,
        seed: 11,
    }
}

#[test]
fn estimate_and_slope_helpers() {
    let e = Estimate::from_samples(&[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(e.mean, 2.5);
    assert!((e.stderr - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
    let x = [10.0, 100.0, 1000.0];
    let y: Vec<f64> = x.iter().map(|m: &f64| 3.0 / m).collect();
    assert!((log_log_slope(&x, &y).unwrap() + 1.0).abs() < 1e-12);
    assert!(log_log_slope(&x, &[1.0, 0.0, 1.0]).is_none());
    assert!(log_log_slope(&[1.0], &[1.0]).is_none());
}

#[test]
fn cash_strategy_has_unit_reward() {
    let model = model("baseline");
    let zero = Strategy::new(vec![0.0], &model.constraints).unwrap();
    let e = mc_reward(&model, &zero, 0.0, &[0.5], &sim(200), None).unwrap();
    assert_eq!(e.mean, 1.0);
    assert_eq!(e.stderr, 0.0);
}

#[test]
fn single_state_reward_is_deterministic() {
    let model = model("single_state");
    let h = Strategy::new(vec![0.8], &model.constraints).unwrap();
    let b = crate::control::b_value(&model, &[1.0], &h.h);
    for t in [0.0, 0.25] {
        let e = mc_reward(&model, &h, t, &[], &sim(100), None).unwrap();
        let exact = (-b * (1.0 - t)).exp();
        assert!((e.mean - exact).abs() <= 3.0 * e.stderr + 1e-12 * exact, "{} {exact}", e.mean);
    }
}

#[test]
fn too_few_paths_rejected() {
    let model = model("baseline");
    let h = Strategy::new(vec![0.0], &model.constraints).unwrap();
    assert!(mc_reward(&model, &h, 0.0, &[0.5], &sim(10), None).is_err());
    assert!(mc_reward(&model, &h, 0.0, &[1.5], &sim(100), None).is_err());
}

#[test]
fn frozen_dynamics_have_no_increments() {
    let model = model("frozen");
    let h = Strategy::new(vec![1.0], &model.constraints).unwrap();
    let r = moment_suite(&model, &h, 0.0, &[0.4], &[0.4], &default_deltas(1.0), &sim(100)).unwrap();
    assert!(r.degenerate);
    assert!(r.slope_increment.is_none());
    for row in &r.rows {
        assert!(row.increment.mean < 1e-24);
        assert_eq!(row.paired.mean, 0.0);
        assert!(row.paired_ratio.is_none());
        assert!((row.second_moment.mean - 0.16).abs() < 1e-12);
    }
}

#[test]
fn frozen_dynamics_give_pure_noise_distance() {
    let model = model("frozen");
    let h = vec![Strategy::new(vec![1.0], &model.constraints).unwrap()];
    let r = l2_convergence_study(&model, &h, 0.0, &[0.5], &[10.0, 100.0, 1000.0], &sim(200)).unwrap();
    assert!((r.strategies[0].slope.unwrap() + 1.0).abs() < 1e-9);
    // Doob: E sup |B|^2 <= 4 E |B_T|^2.
    assert!(r.strategies[0].envelope_ratio.iter().all(|&x| x <= 1.0));
}

#[test]
fn zero_delta_dpp_gap_is_zero() {
    let model = model("baseline");
    let vg = solve_hjb(&model, &HjbGrid::new(10), None).unwrap();
    let zero = Strategy::new(vec![0.0], &model.constraints).unwrap();
    let cands: Vec<(String, &dyn crate::control::Policy<f64>)> = vec![("grid".into(), &vg.policy), ("cash".into(), &zero)];
    let r = dpp_check(&model, &vg, 0.5, &[0.3], 0.0, &cands, &sim(100), 0.0).unwrap();
    assert_eq!(r.gap, 0.0);
    assert!(r.within);
    assert!(dpp_check(&model, &vg, 0.95, &[0.3], 0.1, &cands, &sim(100), 0.0).is_err());
}

#[test]
fn single_state_dpp_with_merton_candidate() {
    let model = model("single_state");
    let vg = solve_hjb(&model, &HjbGrid::new(1), None).unwrap();
    let merton = Strategy::new(crate::control::merton_point(&model, &[1.0]), &model.constraints).unwrap();
    let cands: Vec<(String, &dyn crate::control::Policy<f64>)> = vec![("merton".into(), &merton)];
    let r = dpp_check(&model, &vg, 0.5, &[], 0.1, &cands, &sim(100), 0.0).unwrap();
    assert!(r.gap.abs() <= 3.0 * r.stderr + 1e-12 * r.value, "{}", r.gap);
}

#[test]
fn single_state_continuity_is_bounded() {
    let model = model("single_state");
    let vg = solve_hjb(&model, &HjbGrid::new(1), None).unwrap();
    let r = continuity_study(&vg);
    assert!(r.c_fit > 0.0);
    assert!(r.bounded(0.25), "{r:?}");
    assert_eq!(r.lipschitz_pi, 0.0);
}

#[test]
fn long_csv_layout() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.csv");
    let rows = vec![
        LongRow::new("l2", Some(10.0), "slope", -1.0, None),
        LongRow::estimate("l2", None, "mean", &Estimate::from_samples(&[1.0, 3.0])),
    ];
    write_long_csv(&rows, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text, "study,m,metric,value,stderr\nl2,10,slope,-1,\nl2,,mean,2,1\n");
}

#[test]
fn regularized_policies_approach_reference() {
    let mut cfg = config("baseline");
    cfg.numerics.grid_cells = 20;
    let model: crate::Model64 = cfg.build().unwrap();
    let r = epsilon_optimality_study(&model, &HjbGrid::new(20), &[10.0, 1000.0], 0.0, &[0.5], &sim(200)).unwrap();
    assert!(r.grid_decreasing, "{r:?}");
    assert!(r.levels[1].grid_distance < 0.01);
}
