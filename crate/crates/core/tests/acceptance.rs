//! Acceptance suite on the desk-scale configurations in `configs/`.
//!
//! Each test prints one `PASS`/`FAIL` line (written straight to stdout so it
//! shows up without `--nocapture`) and then asserts the criterion.

use std::io::Write;
use std::path::{Path, PathBuf};

use expo_core::config::Config;
use expo_core::control::{MyopicPolicy, Policy, Strategy};
use expo_core::density::{inverse_rosenblatt, marginal_cdf_chain};
use expo_core::evaluate::{
    continuity_study, default_deltas, dpp_check, epsilon_optimality_study, l2_convergence_study, mc_reward,
    moment_suite, refinement_budget, reward_convergence_study, SimSpec,
};
use expo_core::harness::{self, Command, RunRequest, Study};
use expo_core::hjb::{ellipticity_check, solve_hjb, HjbGrid};
use expo_core::model::SimplexPoint;
use expo_core::rng::{derive_seed, path_rng};
use expo_core::simulation::{bayes_update, simulate_market_path, SdeCoefficients};
use expo_core::Model64;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rayon::prelude::*;

const SEED: u64 = 7;

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(format!("{name}.json"))
}

fn load(name: &str) -> (Config, Model64) {
    let cfg = Config::load(&config_path(name), &[]).unwrap();
    let model = cfg.build().unwrap();
    (cfg, model)
}

fn sim(cfg: &Config) -> SimSpec {
    SimSpec {
        dt: cfg.numerics.dt,
        paths: cfg.numerics.paths,
        seed: SEED,
    }
}

fn grid_spec(cfg: &Config) -> HjbGrid {
    HjbGrid {
        cells: cfg.numerics.grid_cells,
        time_steps: cfg.numerics.time_steps,
        cfl: cfg.numerics.cfl,
    }
}

fn strategies(cfg: &Config, model: &Model64) -> Vec<Strategy<f64>> {
    cfg.study
        .strategies
        .clone()
        .expect("baseline lists its strategies")
        .into_iter()
        .map(|h| Strategy::new(h, &model.constraints).unwrap())
        .collect()
}

fn report(n: usize, name: &str, passed: bool, detail: String) {
    let line = format!(
        "acceptance {n:>2} {:<34} {}  {detail}\n",
        name,
        if passed { "PASS" } else { "FAIL" }
    );
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
    assert!(passed, "criterion {n} ({name}) failed: {detail}");
}

fn sci(xs: &[f64]) -> String {
    let parts: Vec<String> = xs.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn phi_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Baseline signal law written out by hand: on `[-1, 1]`, a Gaussian with
/// mean `mu` and sd 0.4 truncated and renormalized, mixed with weight 0.2
/// with the uniform density.
struct MixtureOracle {
    means: Vec<f64>,
    sd: f64,
    eps: f64,
}

impl MixtureOracle {
    fn baseline() -> Self {
        Self {
            means: vec![0.4, -0.4],
            sd: 0.4,
            eps: 0.2,
        }
    }

    fn mass(&self, mu: f64) -> f64 {
        phi_cdf((1.0 - mu) / self.sd) - phi_cdf((-1.0 - mu) / self.sd)
    }

    fn pdf(&self, k: usize, z: f64) -> f64 {
        let mu = self.means[k];
        let x = (z - mu) / self.sd;
        let g = (-0.5 * x * x).exp() / (self.sd * (2.0 * std::f64::consts::PI).sqrt());
        (1.0 - self.eps) * g / self.mass(mu) + self.eps / 2.0
    }

    fn cdf(&self, k: usize, z: f64) -> f64 {
        let mu = self.means[k];
        let g = (phi_cdf((z - mu) / self.sd) - phi_cdf((-1.0 - mu) / self.sd)) / self.mass(mu);
        (1.0 - self.eps) * g + self.eps * (z + 1.0) / 2.0
    }

    fn mix_cdf(&self, p: &[f64], z: f64) -> f64 {
        p.iter().enumerate().map(|(k, &pk)| pk * self.cdf(k, z)).sum()
    }
}

fn random_simplex<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..d).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

#[test]
fn criterion_01_filter_normalization() {
    let (cfg, model) = load("baseline");
    let paths = cfg.numerics.paths;
    let stats: Vec<(usize, usize)> = (0..paths)
        .into_par_iter()
        .map(|i| {
            let b = simulate_market_path(&model, cfg.numerics.dt, SEED, i as u64).unwrap();
            (b.filter_path.len() - 1, b.steps_sum_preserved)
        })
        .collect();
    let steps: usize = stats.iter().map(|s| s.0).sum();
    let kept: usize = stats.iter().map(|s| s.1).sum();
    let fraction = kept as f64 / steps as f64;

    let oracle = MixtureOracle::baseline();
    let mut rng = path_rng(SEED, 1 << 40);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let p = random_simplex(&mut rng, 2);
        let u: f64 = rng.random();
        let z = inverse_rosenblatt(model.densities(), &[u], &p, &model.rule).unwrap();
        let post = bayes_update(&model, &SimplexPoint::new(p.clone()).unwrap(), &z);
        let w: Vec<f64> = (0..2).map(|k| p[k] * oracle.pdf(k, z[0])).collect();
        let total: f64 = w.iter().sum();
        for k in 0..2 {
            worst = worst.max((post.as_slice()[k] - w[k] / total).abs());
        }
    }
    report(
        1,
        "filter normalization and Bayes jump",
        fraction >= 0.999 && worst < 1e-12,
        format!("{fraction:.6} of {steps} steps within 1e-10; max Bayes error {worst:.2e} over 10^4 jumps"),
    );
}

#[test]
fn criterion_02_rosenblatt() {
    let (_, model) = load("baseline");
    let fam = model.densities();
    let oracle = MixtureOracle::baseline();
    let mut rng = path_rng(SEED, 1 << 41);
    let mut round_trip = 0.0f64;
    for _ in 0..1000 {
        let p = random_simplex(&mut rng, 2);
        let z = [-1.0 + 2.0 * rng.random::<f64>()];
        let u = marginal_cdf_chain(fam, &z, &p, &model.rule).unwrap();
        let back = inverse_rosenblatt(fam, &u, &p, &model.rule).unwrap();
        round_trip = round_trip.max((back[0] - z[0]).abs());
    }

    // The sampled law is only as good as the conditional CDF it inverts.
    let mut cdf_error = 0.0f64;
    for p in [[0.5, 0.5], [0.9, 0.1], [0.2, 0.8]] {
        for i in 0..=200 {
            let z = -1.0 + i as f64 / 100.0;
            let u = marginal_cdf_chain(fam, &[z], &p, &model.rule).unwrap()[0];
            cdf_error = cdf_error.max((u - oracle.mix_cdf(&p, z)).abs());
        }
    }

    let n = 100_000;
    let critical = 1.358 / (n as f64).sqrt();
    let mut ks = Vec::new();
    for (j, p) in [[0.5, 0.5], [0.9, 0.1], [0.2, 0.8]].iter().enumerate() {
        let mut z: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut r = path_rng(derive_seed(SEED, 2), (j * n + i) as u64);
                let u: f64 = r.random();
                inverse_rosenblatt(fam, &[u], p, &model.rule).unwrap()[0]
            })
            .collect();
        z.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let d = z
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = oracle.mix_cdf(p, x);
                (f - i as f64 / n as f64).max((i + 1) as f64 / n as f64 - f)
            })
            .fold(0.0, f64::max);
        ks.push(d);
    }
    report(
        2,
        "Rosenblatt round trip and KS",
        round_trip < 1e-8 && cdf_error < 1e-10 && ks.iter().all(|&d| d < critical),
        format!("round trip {round_trip:.2e}; CDF error {cdf_error:.1e}; KS {ks:.4?} vs 5% critical {critical:.4}"),
    );
}

/// Smallest eigenvalue of `beta^T beta + c I`, computed here without clamping.
fn min_eig(beta: &DMatrix<f64>, c: f64) -> f64 {
    let dim = beta.ncols();
    let g = beta.transpose() * beta + DMatrix::identity(dim, dim) * c;
    SymmetricEigen::new(g).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

#[test]
fn criterion_03_degeneracy_and_ellipticity() {
    let (cfg, model) = load("three_state");
    let coeffs = SdeCoefficients::new(&model);
    let cells = cfg.numerics.grid_cells;
    let mut nodes = Vec::new();
    for i in 0..=cells {
        for j in 0..=cells - i {
            nodes.push(vec![i as f64 / cells as f64, j as f64 / cells as f64]);
        }
    }
    let plain = nodes
        .iter()
        .map(|x| min_eig(&coeffs.diffusion(x), 0.0))
        .fold(f64::INFINITY, f64::min);
    let library_plain = nodes
        .iter()
        .map(|x| ellipticity_check(&model, x, None))
        .fold(f64::INFINITY, f64::min);
    let mut regularized = Vec::new();
    let mut ok = plain.abs() < 1e-12 && library_plain == 0.0;
    for m in [10.0, 100.0] {
        let floor = 1.0 / (2.0 * m);
        let lo = nodes
            .iter()
            .map(|x| min_eig(&coeffs.diffusion(x), floor))
            .fold(f64::INFINITY, f64::min);
        let lib = nodes
            .iter()
            .map(|x| ellipticity_check(&model, x, Some(m)))
            .fold(f64::INFINITY, f64::min);
        ok &= lo >= floor * (1.0 - 1e-12) && lib >= floor;
        regularized.push((m, lo));
    }
    report(
        3,
        "degeneracy vs ellipticity",
        ok,
        format!(
            "{} nodes; unregularized min eig {plain:.2e}; regularized (m, min eig) {regularized:?}",
            nodes.len()
        ),
    );
}

#[test]
fn criterion_04_single_state_closed_form() {
    let (cfg, model) = load("single_state");
    let m = &cfg.model;
    let (mu, sigma, theta, horizon) = (m.drift[0][0], m.sigma[0][0], m.theta, m.horizon);
    let h = mu / (sigma * sigma * (1.0 - theta));
    assert!((-1.0..=2.0).contains(&h));
    let b = -theta * (h * mu - 0.5 * (1.0 - theta) * h * h * sigma * sigma);
    let exact = |t: f64| (-b * (horizon - t)).exp();

    let vg = solve_hjb(&model, &grid_spec(&cfg), None).unwrap();
    let pde = vg
        .t_nodes
        .iter()
        .map(|&t| (vg.value_at(t, &[]) - exact(t)).abs() / exact(t))
        .fold(0.0, f64::max);
    let mc = mc_reward(&model, &vg.policy, 0.0, &[], &sim(&cfg), None).unwrap();
    let tol = 3.0 * mc.stderr + 1e-12 * exact(0.0);
    report(
        4,
        "one-state closed form",
        pde < 1e-3 && (mc.mean - exact(0.0)).abs() <= tol,
        format!(
            "PDE rel error {pde:.2e}; MC {:.12} +- {:.1e} vs {:.12}",
            mc.mean,
            mc.stderr,
            exact(0.0)
        ),
    );
}

#[test]
fn criterion_05_moment_estimates() {
    let (cfg, model) = load("baseline");
    let h = Strategy::new(model.constraints.slater_point.clone(), &model.constraints).unwrap();
    let r = moment_suite(&model, &h, 0.0, &[0.5], &[0.6], &default_deltas(1.0), &sim(&cfg)).unwrap();
    let near_one = |s: Option<f64>| s.is_some_and(|s| (s - 1.0).abs() <= 0.15);
    let spread = r.paired_spread.unwrap_or(f64::INFINITY);
    report(
        5,
        "short-time moments",
        near_one(r.slope_increment) && near_one(r.slope_sup_increment) && spread < 3.0,
        format!(
            "slopes {:.3?} / {:.3?}; paired max/min {spread:.3}; max E|pi|^2 {:.3}",
            r.slope_increment, r.slope_sup_increment, r.max_second_moment
        ),
    );
}

#[test]
fn criterion_06_l2_regularization() {
    let (cfg, model) = load("baseline");
    let hs = strategies(&cfg, &model);
    let r = l2_convergence_study(&model, &hs, 0.0, &[0.5], &cfg.study.m_list, &sim(&cfg)).unwrap();
    let in_band = |s: Option<f64>| s.is_some_and(|s| (s + 1.0).abs() <= 0.3);
    let mut ok = r.strategies.len() == 3 && in_band(r.max_slope);
    let mut details = Vec::new();
    for s in &r.strategies {
        let lo = s.envelope_ratio.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = s.envelope_ratio.iter().copied().fold(0.0, f64::max);
        ok &= in_band(s.slope) && hi <= 2.0 * lo;
        details.push(format!("h={:?}: slope {:.3}, ratio [{lo:.3}, {hi:.3}]", s.h, s.slope.unwrap_or(f64::NAN)));
    }
    report(
        6,
        "L2 regularization convergence",
        ok,
        format!("{}; max over h slope {:.3?}", details.join("; "), r.max_slope),
    );
}

#[test]
fn criterion_07_reward_and_value_convergence() {
    let (cfg, model) = load("baseline");
    let hs = strategies(&cfg, &model);
    let m_list = &cfg.study.value_m_list;
    let rc = reward_convergence_study(&model, &hs, 0.0, &[0.5], m_list, &sim(&cfg)).unwrap();

    let spec = grid_spec(&cfg);
    let plain = solve_hjb(&model, &spec, None).unwrap();
    let times = [0.0, 0.25, 0.5, 0.75];
    let dist: Vec<f64> = m_list
        .iter()
        .map(|&m| solve_hjb(&model, &spec, Some(m)).unwrap().sup_distance(&plain, &times))
        .collect();
    let grid_decreasing = dist.windows(2).all(|w| w[1] < w[0]);
    report(
        7,
        "reward and value convergence in m",
        rc.nonincreasing && rc.overall_decrease && grid_decreasing,
        format!(
            "max_h |v^m - v| {}, first-last {:.2e} +- {:.1e}, every step beyond 2 SE: {}; |V^m - V| {}",
            sci(&rc.max_abs),
            rc.overall.mean,
            rc.overall.stderr,
            rc.strict_steps,
            sci(&dist)
        ),
    );
}

#[test]
fn criterion_08_epsilon_optimality() {
    let (cfg, model) = load("baseline");
    let r = epsilon_optimality_study(&model, &grid_spec(&cfg), &cfg.study.value_m_list, 0.0, &[0.5], &sim(&cfg))
        .unwrap();
    let at = r.levels.iter().find(|l| l.m == 1000.0).expect("m = 1000 in the list");
    let small = at.gap < 0.01 * r.value_ref + 3.0 * at.reward.stderr;
    report(
        8,
        "epsilon-optimality",
        r.gaps_nonincreasing && r.gaps_decrease && small,
        format!(
            "V_ref {:.5}; gaps {}; change first-last {:.2e} +- {:.1e}; gap(1000) {:.2e}",
            r.value_ref,
            sci(&r.levels.iter().map(|l| l.gap).collect::<Vec<_>>()),
            r.overall_change.mean,
            r.overall_change.stderr,
            at.gap
        ),
    );
}

#[test]
fn criterion_09_dynamic_programming() {
    let (cfg, model) = load("baseline");
    let spec = grid_spec(&cfg);
    let fine_spec = HjbGrid {
        cells: 2 * spec.cells,
        ..spec.clone()
    };
    let coarse = solve_hjb(&model, &spec, None).unwrap();
    let fine = solve_hjb(&model, &fine_spec, None).unwrap();
    let (t, delta, pi) = (0.5, 0.1, [0.5]);
    let budget = refinement_budget(&coarse, &fine, t, &pi);
    let myopic = MyopicPolicy { model: &model };
    let constants: Vec<(String, Strategy<f64>)> = [0.0, -1.0, 2.0]
        .iter()
        .map(|&h| (format!("constant {h}"), Strategy::new(vec![h], &model.constraints).unwrap()))
        .collect();
    let mut candidates: Vec<(String, &dyn Policy<f64>)> = vec![("grid".into(), &fine.policy), ("myopic".into(), &myopic)];
    candidates.extend(constants.iter().map(|(n, s)| (n.clone(), s as &dyn Policy<f64>)));
    let r = dpp_check(&model, &fine, t, &pi, delta, &candidates, &sim(&cfg), budget).unwrap();
    report(
        9,
        "dynamic programming principle",
        r.within,
        format!(
            "V {:.6}; best ({}) gap {:.2e}, SE {:.1e}, budget {:.1e}",
            r.value, r.candidates[r.best].0, r.gap, r.stderr, budget
        ),
    );
}

#[test]
fn criterion_10_continuity_modulus() {
    let (cfg, model) = load("baseline");
    let vg = solve_hjb(&model, &grid_spec(&cfg), None).unwrap();
    let r = continuity_study(&vg);
    report(
        10,
        "time continuity modulus",
        r.bounded(0.25),
        format!(
            "fitted C {:.4}, regression {:.4}, worst ratio {:.4} ({} pairs)",
            r.c_fit, r.c_regression, r.max_ratio, r.pairs
        ),
    );
}

fn outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv" || x == "bin"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn criterion_11_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let commands = [
        (Command::Simulate, vec!["numerics.paths=1000".to_string()]),
        (Command::Study(Study::Moments), vec!["numerics.paths=1000".to_string()]),
        (Command::Solve { m: Some(100.0) }, vec!["numerics.grid_cells=40".to_string()]),
    ];
    let mut ok = true;
    let mut compared = 0;
    for (i, (command, overrides)) in commands.into_iter().enumerate() {
        let runs: Vec<_> = ["a", "b"]
            .iter()
            .map(|tag| {
                let out = dir.path().join(format!("{i}{tag}"));
                let req = RunRequest {
                    command: command.clone(),
                    config: config_path("baseline"),
                    overrides: overrides.clone(),
                    seed: SEED,
                    out: out.clone(),
                    threads: None,
                };
                harness::run(&req).unwrap();
                outputs(&out)
            })
            .collect();
        ok &= !runs[0].is_empty() && runs[0] == runs[1];
        compared += runs[0].len();
    }
    report(
        11,
        "byte-identical reruns",
        ok,
        format!("{compared} CSV/binary files compared across simulate, study moments, solve"),
    );
}
