use super::*;
use crate::control::merton_point;
use crate::testing::{config, model};

#[test]
fn single_state_matches_exponential() {
    let model = model("single_state");
    let vg = solve_hjb(&model, &HjbGrid::new(10), None).unwrap();
    let h = merton_point(&model, &[1.0]);
    assert!((h[0] - 1.6).abs() < 1e-12);
    let b = crate::control::b_value(&model, &[1.0], &h);
    for (n, &t) in vg.t_nodes.iter().enumerate() {
        let exact = (-b * (1.0 - t)).exp();
        assert!((vg.level(n)[0] - exact).abs() < 1e-12 * exact);
        assert!((vg.policy.at(n, 0)[0] - 1.6).abs() < 1e-12);
    }
    assert_eq!(vg.value_at(1.0, &[]), 1.0);
}

#[test]
fn zero_drift_gives_unit_value() {
    let mut cfg = config("frozen");
    cfg.model.drift = vec![vec![0.0, 0.0]];
    let model: crate::Model64 = cfg.build().unwrap();
    let vg = solve_hjb(&model, &HjbGrid::new(10), None).unwrap();
    assert!(vg.values.iter().all(|&v| (v - 1.0).abs() < 1e-14));
    assert!(vg.policy.values.iter().all(|&h| h.abs() < 1e-12));
}

#[test]
fn baseline_solution_is_bounded_and_monotone() {
    let model = model("baseline");
    let vg = solve_hjb(&model, &HjbGrid::new(20), None).unwrap();
    let last = vg.levels() - 1;
    assert!(vg.level(last).iter().all(|&v| v == 1.0));
    assert!(vg.meta.min_weight >= 0.0);
    assert!(vg.meta.cfl_ratio <= 0.9 + 1e-12);
    for n in 0..vg.levels() {
        let (lo, hi) = model.value_bounds(vg.t_nodes[n]);
        assert!(vg.level(n).iter().all(|&v| v >= lo && v <= hi));
    }
    assert!(vg.policy.max_violation(&model.constraints) <= 1e-10);
    // Investing beats holding cash.
    assert!(vg.value_at(0.0, &[0.5]) > 1.0);
}

#[test]
fn too_few_steps_is_a_cfl_error() {
    let model = model("baseline");
    let spec = HjbGrid {
        cells: 20,
        time_steps: Some(5),
        cfl: 0.9,
    };
    match solve_hjb(&model, &spec, None) {
        Err(Error::Cfl { dt, required }) => assert!(dt > required),
        other => panic!("expected a CFL error, got {other:?}"),
    }
}

#[test]
fn generator_annihilates_constants() {
    for name in ["baseline", "three_state"] {
        let model = model(name);
        let (grid, _) = solve_grid(&model, &HjbGrid::new(8), Some(10.0)).unwrap();
        let disc = Discretization::new(&model, grid, Some(10.0)).unwrap();
        let g = vec![1.0; disc.len()];
        let h = vec![0.7];
        for i in 0..disc.len() {
            assert!(disc.generator_parts(&g, i, &h).total().abs() < 1e-12);
        }
    }
}

#[test]
fn identical_densities_have_no_jump_term() {
    let mut cfg = config("baseline");
    cfg.signals.densities = vec![crate::config::DensitySpec::Uniform; 2];
    let model: crate::Model64 = cfg.build().unwrap();
    let disc = Discretization::new(&model, PiGrid::simplex(1, 16), None).unwrap();
    let g: Vec<f64> = (0..disc.len()).map(|i| disc.coords(i)[0].powi(3)).collect();
    for i in 0..disc.len() {
        assert!(disc.generator_parts(&g, i, &[1.0]).jump.abs() < 1e-14);
    }
}

#[test]
fn diffusion_of_square_is_exact_in_one_dimension() {
    let model = model("baseline");
    let disc = Discretization::new(&model, PiGrid::simplex(1, 16), None).unwrap();
    let g: Vec<f64> = (0..disc.len()).map(|i| disc.coords(i)[0].powi(2)).collect();
    let a = 0.25 / 0.5;
    let c = -0.15 / 0.5;
    for i in 0..disc.len() {
        let x = disc.coords(i)[0];
        // beta for two states: p1 (a - (p1 a + p2 c)) = p1 p2 (a - c).
        let beta = x * (1.0 - x) * (a - c);
        let got = disc.generator_parts(&g, i, &[0.0]).diffusion;
        assert!((got - beta * beta).abs() < 1e-12, "{x}: {got} vs {}", beta * beta);
    }
}

#[test]
fn ellipticity_at_vertices_and_degeneracy() {
    let model = model("three_state");
    assert_eq!(ellipticity_check(&model, &[1.0, 0.0], Some(10.0)), 0.05);
    assert_eq!(ellipticity_check(&model, &[0.0, 0.0], Some(100.0)), 0.005);
    let grid = PiGrid::<f64>::simplex(2, 8);
    let min = (0..grid.len())
        .map(|i| ellipticity_check(&model, &grid.coords(i), None))
        .fold(f64::INFINITY, f64::min);
    assert!(min < 1e-14);
    let max = (0..grid.len())
        .map(|i| ellipticity_check(&model, &grid.coords(i), None))
        .fold(0.0, f64::max);
    assert!(max < 1e-14, "one asset gives a rank-one Gram matrix everywhere");
}

#[test]
fn extracted_policy_reproduces_solver_policy() {
    let model = model("baseline");
    let vg = solve_hjb(&model, &HjbGrid::new(12), None).unwrap();
    let field = extract_policy(&model, &vg).unwrap();
    for (a, b) in field.values.iter().zip(&vg.policy.values) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn export_round_trip() {
    let model = model("baseline");
    let vg = solve_hjb(&model, &HjbGrid::new(10), Some(100.0)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("value");
    write_value_grid(&vg, &stem, 1).unwrap();
    let back: ValueGrid<f64> = read_value_grid(&stem).unwrap();
    assert_eq!(back.values, vg.values);
    assert_eq!(back.t_nodes, vg.t_nodes);
    assert_eq!(back.policy.values, vg.policy.values);
    assert_eq!(back.meta, vg.meta);
}
