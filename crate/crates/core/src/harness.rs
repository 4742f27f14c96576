//! Command orchestration for the CLI: each run loads and validates a config,
//! executes one command, and writes `meta.json`, `summary.json` and CSV
//! outputs to the output directory.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::Config;
use crate::control::{b_value, merton_point, metric_projection, MyopicPolicy, Policy, Strategy};
use crate::density::derivative_bound_probe;
use crate::error::{Error, Result};
use crate::evaluate::{
    continuity_study, default_deltas, dpp_check, epsilon_optimality_study, l2_convergence_study, moment_suite,
    refinement_budget, reward_convergence_study, reward_samples, write_long_csv, Check, Estimate, LongRow, SimSpec,
};
use crate::hjb::{solve_hjb, write_value_grid, HjbGrid, ValueGrid};
use crate::model::{Model, RestrictedPoint};
use crate::simulation::{simulate_market_path, write_binary, write_bundles_csv};

/// Version string baked in at build time (`git describe` when available).
pub const VERSION: &str = env!("EXPO_VERSION");

/// Paths simulated per batch by `simulate`, bounding memory.
const SIMULATE_BATCH: usize = 500;

/// Time levels written by `solve`.
const EXPORT_LEVELS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Study {
    L2,
    Moments,
    Dpp,
    EpsOpt,
    Continuity,
}

impl Study {
    pub fn name(self) -> &'static str {
        match self {
            Study::L2 => "l2",
            Study::Moments => "moments",
            Study::Dpp => "dpp",
            Study::EpsOpt => "eps-opt",
            Study::Continuity => "continuity",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Simulate,
    Solve { m: Option<f64> },
    Evaluate,
    Study(Study),
    ProbeBounds,
    Validate,
}

impl Command {
    pub fn name(&self) -> String {
        match self {
            Command::Simulate => "simulate".into(),
            Command::Solve { .. } => "solve".into(),
            Command::Evaluate => "evaluate".into(),
            Command::Study(s) => format!("study {}", s.name()),
            Command::ProbeBounds => "probe bounds".into(),
            Command::Validate => "validate".into(),
        }
    }

    /// Stem of the long-format CSV written by the command.
    fn stem(&self) -> String {
        match self {
            Command::Study(s) => format!("study_{}", s.name().replace('-', "_")),
            Command::ProbeBounds => "probe_bounds".into(),
            other => other.name(),
        }
    }
}

/// Everything a run needs besides the config contents.
#[derive(Clone, Debug)]
pub struct RunRequest {
    pub command: Command,
    pub config: PathBuf,
    pub overrides: Vec<String>,
    pub seed: u64,
    pub out: PathBuf,
    pub threads: Option<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<Check>,
    /// Files written to the output directory, relative to it.
    pub outputs: Vec<String>,
    pub results: Value,
    pub config: Value,
}

impl Summary {
    /// `0` when every check passed, `1` otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.passed {
            0
        } else {
            1
        }
    }
}

/// Machine-readable error report.
pub fn error_json(e: &Error) -> Value {
    let mut v = json!({ "kind": e.kind(), "message": e.to_string() });
    if let Error::Validation(report) = e {
        v["violations"] = serde_json::to_value(&report.violations).expect("violations serialize");
    }
    v
}

/// Loads the config, runs the command and writes all artifacts.
pub fn run(req: &RunRequest) -> Result<Summary> {
    let config = Config::load(&req.config, &req.overrides)?;
    fs::create_dir_all(&req.out)?;
    let meta = json!({
        "version": VERSION,
        "command": req.command.name(),
        "config_path": req.config.display().to_string(),
        "overrides": req.overrides,
        "seed": req.seed,
        "threads": req.threads,
        "config": config.to_value(),
    });
    write_json(&req.out.join("meta.json"), &meta)?;
    run_config(&req.command, &config, req.seed, &req.out)
}

/// Runs a command on an already loaded config. Writes the command outputs and
/// `summary.json` but not `meta.json`.
pub fn run_config(command: &Command, config: &Config, seed: u64, out: &Path) -> Result<Summary> {
    fs::create_dir_all(out)?;
    let model: Model<f64> = config.build()?;
    let ctx = Ctx {
        config,
        model: &model,
        seed,
        out,
    };
    let mut res = match command {
        Command::Simulate => simulate(&ctx)?,
        Command::Solve { m } => solve(&ctx, *m)?,
        Command::Evaluate => evaluate(&ctx)?,
        Command::Study(Study::L2) => study_l2(&ctx)?,
        Command::Study(Study::Moments) => study_moments(&ctx)?,
        Command::Study(Study::Dpp) => study_dpp(&ctx)?,
        Command::Study(Study::EpsOpt) => study_eps_opt(&ctx)?,
        Command::Study(Study::Continuity) => study_continuity(&ctx)?,
        Command::ProbeBounds => probe_bounds(&ctx)?,
        Command::Validate => validate(&ctx),
    };
    let csv = format!("{}.csv", command.stem());
    write_long_csv(&res.rows, &out.join(&csv))?;
    res.outputs.push(csv);
    res.outputs.sort();
    let summary = Summary {
        command: command.name(),
        version: VERSION.into(),
        seed,
        passed: res.checks.iter().all(|c| c.passed),
        checks: res.checks,
        outputs: res.outputs,
        results: res.results,
        config: config.to_value(),
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

struct Ctx<'a> {
    config: &'a Config,
    model: &'a Model<f64>,
    seed: u64,
    out: &'a Path,
}

impl Ctx<'_> {
    fn sim(&self) -> SimSpec {
        SimSpec {
            dt: self.config.numerics.dt,
            paths: self.config.numerics.paths,
            seed: self.seed,
        }
    }

    fn grid_spec(&self) -> HjbGrid {
        let n = &self.config.numerics;
        HjbGrid {
            cells: n.grid_cells,
            time_steps: n.time_steps,
            cfl: n.cfl,
        }
    }

    fn start(&self) -> Result<Vec<f64>> {
        restricted_state(self.model, self.config.start_state(), "study.pi")
    }

    fn strategy(&self, h: Vec<f64>) -> Result<Strategy<f64>> {
        Strategy::new(h, &self.model.constraints)
    }

    /// Constant strategies of the convergence studies.
    fn strategies(&self) -> Result<Vec<Strategy<f64>>> {
        let hs = match &self.config.study.strategies {
            Some(hs) => hs.clone(),
            None => default_strategies(self.model),
        };
        hs.into_iter().map(|h| self.strategy(h)).collect()
    }
}

fn restricted_state(model: &Model<f64>, pi: Vec<f64>, field: &str) -> Result<Vec<f64>> {
    if pi.len() + 1 != model.states() {
        return Err(Error::Config(format!(
            "{field} must have {} coordinates, got {}",
            model.states() - 1,
            pi.len()
        )));
    }
    if !RestrictedPoint::new(pi.clone()).in_simplex() {
        return Err(Error::Config(format!("{field} = {pi:?} is outside the simplex")));
    }
    Ok(pi)
}

/// The Slater point of `K` and the points halfway from it to the first two
/// vertices.
pub fn default_strategies(model: &Model<f64>) -> Vec<Vec<f64>> {
    let s = model.constraints.slater_point.clone();
    let mut out = vec![s.clone()];
    for v in model.k_vertices.iter().take(2) {
        out.push(s.iter().zip(v).map(|(a, b)| 0.5 * (a + b)).collect());
    }
    out
}

#[derive(Default)]
struct Outcome {
    checks: Vec<Check>,
    rows: Vec<LongRow>,
    outputs: Vec<String>,
    results: Value,
}

fn to_value<S: Serialize>(x: &S) -> Value {
    serde_json::to_value(x).expect("report serializes")
}

fn validate(ctx: &Ctx<'_>) -> Outcome {
    let m = ctx.model;
    let (lo, hi) = m.value_bounds(0.0);
    let results = json!({
        "states": m.states(),
        "assets": m.assets(),
        "signal_dim": m.kappa(),
        "taper_eps": m.eps,
        "taper_eps_max": m.eps_max,
        "cost_bounds": to_value(&m.cost),
        "value_bounds": [lo, hi],
        "k_vertices": m.k_vertices,
    });
    Outcome {
        checks: vec![Check::new("model valid", true, "all parameter invariants hold")],
        rows: vec![
            LongRow::new("validate", None, "value_lower", lo, None),
            LongRow::new("validate", None, "value_upper", hi, None),
            LongRow::new("validate", None, "taper_eps", m.eps, None),
        ],
        outputs: Vec::new(),
        results,
    }
}

fn simulate(ctx: &Ctx<'_>) -> Result<Outcome> {
    let n = &ctx.config.numerics;
    let d = ctx.model.states();
    let mut steps = 0usize;
    let mut preserved = 0usize;
    let mut repairs = 0usize;
    let mut max_defect = 0.0f64;
    let mut signals = Vec::with_capacity(n.paths);
    let mut terminal: Vec<Vec<f64>> = vec![Vec::with_capacity(n.paths); d];
    let mut exported = Vec::new();
    let mut start = 0;
    while start < n.paths {
        let count = SIMULATE_BATCH.min(n.paths - start);
        let batch = (start..start + count)
            .into_par_iter()
            .map(|i| simulate_market_path(ctx.model, n.dt, ctx.seed, i as u64))
            .collect::<Result<Vec<_>>>()?;
        for (i, b) in (start..).zip(batch) {
            steps += b.filter_path.len() - 1;
            preserved += b.steps_sum_preserved;
            repairs += b.filter_repairs;
            max_defect = max_defect.max(b.max_sum_defect);
            signals.push(b.signal_events.len() as f64);
            let last = b.filter_path.last().expect("nonempty path");
            for (k, &x) in last.as_slice().iter().enumerate() {
                terminal[k].push(x);
            }
            if i < n.export_paths {
                exported.push(b);
            }
        }
        start += count;
    }
    let mut outputs = write_bundles_csv(&exported, ctx.out)?;
    write_binary(&exported, &ctx.out.join("paths.bin"))?;
    outputs.push("paths.bin".into());

    let fraction = preserved as f64 / steps.max(1) as f64;
    let signals = Estimate::from_samples(&signals);
    let mut rows = vec![
        LongRow::new("simulate", None, "fraction_sum_preserved", fraction, None),
        LongRow::new("simulate", None, "max_sum_defect", max_defect, None),
        LongRow::new("simulate", None, "filter_repairs", repairs as f64, None),
        LongRow::estimate("simulate", None, "signals_per_path", &signals),
    ];
    let terminal: Vec<Estimate> = terminal.iter().map(|xs| Estimate::from_samples(xs)).collect();
    for (k, e) in terminal.iter().enumerate() {
        rows.push(LongRow::estimate("simulate", None, format!("terminal_filter_{}", k + 1), e));
    }
    let checks = vec![Check::new(
        "filter normalization",
        fraction >= 0.999,
        format!("{:.5} of {steps} steps keep |sum p - 1| <= 1e-10 before repair", fraction),
    )];
    let results = json!({
        "paths": n.paths,
        "exported_paths": exported.len(),
        "steps": steps,
        "fraction_sum_preserved": fraction,
        "max_sum_defect": max_defect,
        "filter_repairs": repairs,
        "signals_per_path": signals,
        "terminal_filter_mean": terminal,
    });
    Ok(Outcome {
        checks,
        rows,
        outputs,
        results,
    })
}

/// Largest relative error of a one-state solution against `exp(-b (T - t))`
/// with `b` at the projected Merton point.
fn closed_form_error(model: &Model<f64>, vg: &ValueGrid<f64>) -> Result<(f64, f64)> {
    let p = [1.0];
    let target = merton_point(model, &p);
    let h = metric_projection(&model.cov, &model.cov_inv, &target, &model.constraints)?.h;
    let b = b_value(model, &p, &h);
    let horizon = model.horizon();
    let err = vg
        .t_nodes
        .iter()
        .map(|&t| {
            let exact = (-b * (horizon - t)).exp();
            (vg.value_at(t, &[]) - exact).abs() / exact
        })
        .fold(0.0, f64::max);
    Ok((err, b))
}

fn solve(ctx: &Ctx<'_>, m: Option<f64>) -> Result<Outcome> {
    let model = ctx.model;
    let vg = solve_hjb(model, &ctx.grid_spec(), m)?;
    let stride = vg.levels().div_ceil(EXPORT_LEVELS);
    write_value_grid(&vg, &ctx.out.join("value"), stride)?;
    let t = ctx.config.study.t;
    let pi = ctx.start()?;
    let v = vg.value_at(t, &pi);

    let mut checks = vec![Check::new(
        "monotone scheme",
        vg.meta.min_weight >= 0.0,
        format!("smallest explicit weight {:.3e}", vg.meta.min_weight),
    )];
    let mut out_of_bounds = 0usize;
    for n in 0..vg.levels() {
        let (lo, hi) = model.value_bounds(vg.t_nodes[n]);
        out_of_bounds += vg.level(n).iter().filter(|&&x| !(x >= lo && x <= hi)).count();
    }
    checks.push(Check::new(
        "a priori bounds",
        out_of_bounds == 0,
        format!("{out_of_bounds} values outside [exp(-C_b (T - t)), exp(C_b (T - t))]"),
    ));
    let mut rows = vec![
        LongRow::new("solve", m, "value_at_start", v, None),
        LongRow::new("solve", m, "time_steps", vg.meta.time_steps as f64, None),
        LongRow::new("solve", m, "min_weight", vg.meta.min_weight, None),
    ];
    let mut results = json!({
        "t": t,
        "pi": pi,
        "value": v,
        "meta": to_value(&vg.meta),
        "policy_max_violation": vg.policy.max_violation(&model.constraints),
    });
    if model.states() == 1 {
        let (err, b) = closed_form_error(model, &vg)?;
        checks.push(Check::new(
            "closed-form match",
            err < 1e-3,
            format!("max relative error {err:.3e} against exp(-b (T - t)), b = {b}"),
        ));
        rows.push(LongRow::new("solve", m, "closed_form_rel_error", err, None));
        results["closed_form_rel_error"] = json!(err);
        results["closed_form_b"] = json!(b);
    }
    Ok(Outcome {
        checks,
        rows,
        outputs: vec!["value.csv".into(), "value.json".into()],
        results,
    })
}

fn evaluate(ctx: &Ctx<'_>) -> Result<Outcome> {
    let model = ctx.model;
    let study = &ctx.config.study;
    let sim = ctx.sim();
    let t = study.t;
    let pi = ctx.start()?;
    let grid = match study.policy.as_str() {
        "grid" => Some(solve_hjb(model, &ctx.grid_spec(), None)?),
        _ => None,
    };
    let constant;
    let myopic = MyopicPolicy { model };
    let policy: &dyn Policy<f64> = match study.policy.as_str() {
        "grid" => &grid.as_ref().expect("solved above").policy,
        "myopic" => &myopic,
        "constant" => {
            let h = study
                .strategy
                .clone()
                .ok_or_else(|| Error::Config("study.strategy is required with policy \"constant\"".into()))?;
            constant = ctx.strategy(h)?;
            &constant
        }
        other => {
            return Err(Error::Config(format!(
                "study.policy must be grid, myopic or constant, got {other:?}"
            )))
        }
    };
    if sim.paths < crate::evaluate::MIN_PATHS {
        return Err(Error::Config(format!(
            "need at least {} paths, got {}",
            crate::evaluate::MIN_PATHS,
            sim.paths
        )));
    }
    let samples = reward_samples(model, policy, t, &pi, &sim, None)?;
    let reward = Estimate::from_samples(&samples);
    let (lo, hi) = model.value_bounds(t);
    let in_bounds = samples.iter().all(|&x| x >= lo * (1.0 - 1e-12) && x <= hi * (1.0 + 1e-12));
    let mut checks = vec![Check::new(
        "pathwise bounds",
        in_bounds,
        format!("every discounted factor in [{lo:.6}, {hi:.6}]"),
    )];
    let mut rows = vec![LongRow::estimate("evaluate", None, "reward", &reward)];
    let mut results = json!({ "policy": policy.label(), "t": t, "pi": pi, "reward": reward });

    let theta = model.theta();
    if model.constraints.contains(&vec![0.0; model.assets()]) {
        let cash = ctx.strategy(vec![0.0; model.assets()])?;
        let cash_samples = reward_samples(model, &cash, t, &pi, &sim, None)?;
        let diff = Estimate::paired(&samples, &cash_samples);
        rows.push(LongRow::estimate("evaluate", None, "reward_minus_cash", &diff));
        results["reward_minus_cash"] = to_value(&diff);
        if study.policy == "grid" && theta > 0.0 {
            checks.push(Check::new(
                "policy beats cash",
                diff.mean >= -2.0 * diff.stderr,
                format!("reward - cash = {:.3e} +- {:.1e}", diff.mean, diff.stderr),
            ));
        }
    }
    if let Some(grid) = &grid {
        let v = grid.value_at(t, &pi);
        rows.push(LongRow::new("evaluate", None, "grid_value", v, None));
        results["grid_value"] = json!(v);
        if model.states() == 1 {
            let (_, b) = closed_form_error(model, grid)?;
            let exact = (-b * (model.horizon() - t)).exp();
            let tol = 3.0 * reward.stderr + 1e-12 * exact;
            checks.push(Check::new(
                "closed-form match",
                (reward.mean - exact).abs() <= tol,
                format!("reward {} vs exp(-b (T - t)) = {exact}", reward.mean),
            ));
        }
    }
    Ok(Outcome {
        checks,
        rows,
        outputs: Vec::new(),
        results,
    })
}

fn study_l2(ctx: &Ctx<'_>) -> Result<Outcome> {
    let study = &ctx.config.study;
    let hs = ctx.strategies()?;
    let pi = ctx.start()?;
    let r = l2_convergence_study(ctx.model, &hs, study.t, &pi, &study.m_list, &ctx.sim())?;
    let in_band = |s: Option<f64>| s.is_some_and(|s| (s + 1.0).abs() <= 0.3);
    let mut checks = Vec::new();
    let mut rows = Vec::new();
    for (i, s) in r.strategies.iter().enumerate() {
        checks.push(Check::new(
            format!("slope h{} = {:?}", i + 1, s.h),
            in_band(s.slope),
            format!("log-log slope {:?}, expected -1 +- 0.3", s.slope),
        ));
        let lo = s.envelope_ratio.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = s.envelope_ratio.iter().copied().fold(0.0, f64::max);
        checks.push(Check::new(
            format!("envelope shape h{}", i + 1),
            hi.is_finite() && lo > 0.0 && hi <= 2.0 * lo,
            format!("m E sup|pi^m - pi|^2 / (4 (d-1) T) in [{lo:.4}, {hi:.4}]"),
        ));
        for (m, e) in study.m_list.iter().zip(&s.estimates) {
            rows.push(LongRow::estimate("l2", Some(*m), format!("sup_sq_h{}", i + 1), e));
        }
        if let Some(slope) = s.slope {
            rows.push(LongRow::new("l2", None, format!("slope_h{}", i + 1), slope, None));
        }
    }
    checks.push(Check::new(
        "slope of max over h",
        in_band(r.max_slope),
        format!("log-log slope {:?}, expected -1 +- 0.3", r.max_slope),
    ));
    for (m, x) in study.m_list.iter().zip(&r.max_over_h) {
        rows.push(LongRow::new("l2", Some(*m), "max_over_h", *x, None));
    }
    Ok(Outcome {
        checks,
        rows,
        outputs: Vec::new(),
        results: to_value(&r),
    })
}

/// Second start for the paired estimate: the first coordinate moved by 0.1
/// towards the interior.
fn paired_start(pi: &[f64]) -> Vec<f64> {
    let mut xi = pi.to_vec();
    let mut up = xi.clone();
    up[0] += 0.1;
    if RestrictedPoint::new(up.clone()).in_simplex() {
        return up;
    }
    xi[0] -= 0.1;
    xi
}

fn study_moments(ctx: &Ctx<'_>) -> Result<Outcome> {
    let model = ctx.model;
    let study = &ctx.config.study;
    let pi = ctx.start()?;
    if pi.is_empty() {
        return Err(Error::Config("the moment study needs at least two states".into()));
    }
    let xi = match &study.paired_pi {
        Some(x) => restricted_state(model, x.clone(), "study.paired_pi")?,
        None => paired_start(&pi),
    };
    let h = match &study.strategy {
        Some(h) => ctx.strategy(h.clone())?,
        None => ctx.strategy(model.constraints.slater_point.clone())?,
    };
    let deltas = study
        .delta_list
        .clone()
        .unwrap_or_else(|| default_deltas(model.horizon() - study.t));
    let r = moment_suite(model, &h, study.t, &pi, &xi, &deltas, &ctx.sim())?;
    let mut checks = Vec::new();
    let bound = (model.states() - 1) as f64 * (1.0 + model.eps).powi(2);
    checks.push(Check::new(
        "second moment bounded",
        r.max_second_moment <= bound,
        format!("max E|pi_delta|^2 = {:.4} <= {bound:.4}", r.max_second_moment),
    ));
    if r.degenerate {
        checks.push(Check::new("frozen dynamics", true, "all increments vanish"));
    } else {
        let in_band = |s: Option<f64>| s.is_some_and(|s| (s - 1.0).abs() <= 0.15);
        checks.push(Check::new(
            "increment slope",
            in_band(r.slope_increment),
            format!("slope of E|pi_delta - pi|^2 is {:?}, expected 1 +- 0.15", r.slope_increment),
        ));
        checks.push(Check::new(
            "sup increment slope",
            in_band(r.slope_sup_increment),
            format!(
                "slope of E sup|pi_s - pi|^2 is {:?}, expected 1 +- 0.15",
                r.slope_sup_increment
            ),
        ));
        if let Some(spread) = r.paired_spread {
            checks.push(Check::new(
                "paired-start ratio bounded",
                spread < 3.0,
                format!("max/min of E|pi_delta - xi_delta|^2 / |pi - xi|^2 is {spread:.3}"),
            ));
        }
    }
    let mut rows = Vec::new();
    for row in &r.rows {
        let d = Some(row.delta);
        rows.push(LongRow::estimate("moments", d, "second_moment", &row.second_moment));
        rows.push(LongRow::estimate("moments", d, "increment", &row.increment));
        rows.push(LongRow::estimate("moments", d, "sup_increment", &row.sup_increment));
        rows.push(LongRow::estimate("moments", d, "paired", &row.paired));
    }
    let mut results = to_value(&r);
    results["strategy"] = json!(h.h);
    results["pi"] = json!(pi);
    results["xi"] = json!(xi);
    Ok(Outcome {
        checks,
        rows,
        outputs: Vec::new(),
        results,
    })
}

fn study_dpp(ctx: &Ctx<'_>) -> Result<Outcome> {
    let model = ctx.model;
    let study = &ctx.config.study;
    let pi = ctx.start()?;
    let coarse_spec = ctx.grid_spec();
    let fine_spec = HjbGrid {
        cells: coarse_spec.cells * 2,
        time_steps: coarse_spec.time_steps.map(|n| n * 4),
        ..coarse_spec.clone()
    };
    let coarse = solve_hjb(model, &coarse_spec, None)?;
    let fine = solve_hjb(model, &fine_spec, None)?;
    let (t, delta) = (study.dpp_t, study.dpp_delta);
    let budget = refinement_budget(&coarse, &fine, t, &pi);

    let myopic = MyopicPolicy { model };
    let mut constants = Vec::new();
    if model.constraints.contains(&vec![0.0; model.assets()]) {
        constants.push(("cash".to_string(), ctx.strategy(vec![0.0; model.assets()])?));
    }
    for (i, v) in model.k_vertices.iter().enumerate() {
        constants.push((format!("vertex{}", i + 1), ctx.strategy(v.clone())?));
    }
    let mut candidates: Vec<(String, &dyn Policy<f64>)> =
        vec![("grid".into(), &fine.policy), ("myopic".into(), &myopic)];
    candidates.extend(constants.iter().map(|(name, s)| (name.clone(), s as &dyn Policy<f64>)));

    let sim = ctx.sim();
    let main = dpp_check(model, &fine, t, &pi, delta, &candidates, &sim, budget)?;
    let half = dpp_check(model, &fine, t, &pi, delta / 2.0, &candidates, &sim, budget)?;
    let checks = vec![
        Check::new(
            "one-step gap",
            main.within,
            format!(
                "gap {:.3e} with SE {:.1e} and refinement budget {:.1e} (best: {})",
                main.gap, main.stderr, budget, main.candidates[main.best].0
            ),
        ),
        Check::new(
            "gap shrinks with delta",
            half.gap.abs() <= main.gap.abs() + 2.0 * (main.stderr + half.stderr) + budget,
            format!("|gap| {:.3e} at delta/2 vs {:.3e} at delta", half.gap.abs(), main.gap.abs()),
        ),
    ];
    let mut rows = Vec::new();
    for r in [&main, &half] {
        let d = Some(r.delta);
        rows.push(LongRow::new("dpp", d, "grid_value", r.value, None));
        rows.push(LongRow::new("dpp", d, "gap", r.gap, Some(r.stderr)));
        for (name, e) in &r.candidates {
            rows.push(LongRow::estimate("dpp", d, format!("candidate_{name}"), e));
        }
    }
    rows.push(LongRow::new("dpp", None, "refinement_budget", budget, None));
    Ok(Outcome {
        checks,
        rows,
        outputs: Vec::new(),
        results: json!({ "pi": pi, "budget": budget, "delta": to_value(&main), "half_delta": to_value(&half) }),
    })
}

fn study_eps_opt(ctx: &Ctx<'_>) -> Result<Outcome> {
    let model = ctx.model;
    let study = &ctx.config.study;
    let pi = ctx.start()?;
    let sim = ctx.sim();
    let m_list = &study.value_m_list;
    let hs = ctx.strategies()?;
    let rc = reward_convergence_study(model, &hs, study.t, &pi, m_list, &sim)?;
    let eo = epsilon_optimality_study(model, &ctx.grid_spec(), m_list, study.t, &pi, &sim)?;

    let mut checks = Vec::new();
    if model.states() == 1 {
        // The state is constant: regularization changes neither rewards nor values.
        let tiny = 1e-12 * eo.value_ref.abs();
        let none = rc.max_abs.iter().all(|&x| x <= tiny)
            && eo.levels.iter().all(|l| l.grid_distance <= tiny && l.gap.abs() <= 3.0 * l.reward.stderr + tiny);
        checks.push(Check::new(
            "one state: regularization has no effect",
            none,
            format!("max_h |v^m - v| = {:?}", rc.max_abs),
        ));
    } else {
        checks.extend([
            Check::new(
                "reward convergence: no increase",
                rc.nonincreasing,
                format!("max_h |v^m - v| = {:?}; no step increases beyond 2 SE", rc.max_abs),
            ),
            Check::new(
                "reward convergence: overall decrease",
                rc.overall_decrease,
                format!("first minus last = {:.3e} +- {:.1e}", rc.overall.mean, rc.overall.stderr),
            ),
            Check::new(
                "value convergence on the grid",
                eo.grid_decreasing,
                format!(
                    "|V^m - V| = {:?}",
                    eo.levels.iter().map(|l| l.grid_distance).collect::<Vec<_>>()
                ),
            ),
            Check::new(
                "epsilon-optimality gaps: no increase",
                eo.gaps_nonincreasing,
                format!("gaps {:?}", eo.levels.iter().map(|l| l.gap).collect::<Vec<_>>()),
            ),
            Check::new(
                "epsilon-optimality gaps: overall decrease",
                eo.gaps_decrease,
                format!(
                    "reward change first to last m: {:.3e} +- {:.1e}",
                    eo.overall_change.mean, eo.overall_change.stderr
                ),
            ),
        ]);
    }
    let target = eo
        .levels
        .iter()
        .find(|l| l.m == 1000.0)
        .or(eo.levels.last())
        .expect("nonempty m list");
    checks.push(Check::new(
        format!("gap at m = {} below 1% of V", target.m),
        target.gap < 0.01 * eo.value_ref + 3.0 * target.reward.stderr,
        format!("gap {:.3e}, V_ref {:.6}", target.gap, eo.value_ref),
    ));

    let mut rows = Vec::new();
    for (s, diffs) in rc.diffs.iter().enumerate() {
        for (m, e) in m_list.iter().zip(diffs) {
            rows.push(LongRow::estimate("reward_convergence", Some(*m), format!("diff_h{}", s + 1), e));
        }
    }
    for (m, x) in m_list.iter().zip(&rc.max_abs) {
        rows.push(LongRow::new("reward_convergence", Some(*m), "max_abs_diff", *x, None));
    }
    rows.push(LongRow::new("eps_opt", None, "value_ref", eo.value_ref, None));
    rows.push(LongRow::estimate("eps_opt", None, "reward_ref", &eo.reward_ref));
    for l in &eo.levels {
        let m = Some(l.m);
        rows.push(LongRow::new("eps_opt", m, "value", l.value, None));
        rows.push(LongRow::estimate("eps_opt", m, "reward", &l.reward));
        rows.push(LongRow::new("eps_opt", m, "gap", l.gap, Some(l.reward.stderr)));
        rows.push(LongRow::new("eps_opt", m, "grid_distance", l.grid_distance, None));
    }
    Ok(Outcome {
        checks,
        rows,
        outputs: Vec::new(),
        results: json!({ "reward_convergence": to_value(&rc), "epsilon_optimality": to_value(&eo) }),
    })
}

fn study_continuity(ctx: &Ctx<'_>) -> Result<Outcome> {
    let vg = solve_hjb(ctx.model, &ctx.grid_spec(), None)?;
    let r = continuity_study(&vg);
    let checks = vec![Check::new(
        "time modulus bounded",
        r.bounded(0.25),
        format!(
            "largest ratio {:.4} vs fitted C {:.4} over {} pairs",
            r.max_ratio, r.c_fit, r.pairs
        ),
    )];
    let rows = vec![
        LongRow::new("continuity", None, "c_fit", r.c_fit, None),
        LongRow::new("continuity", None, "c_regression", r.c_regression, None),
        LongRow::new("continuity", None, "max_ratio", r.max_ratio, None),
        LongRow::new("continuity", None, "excess", r.excess, None),
        LongRow::new("continuity", None, "lipschitz_pi", r.lipschitz_pi, None),
    ];
    Ok(Outcome {
        checks,
        rows,
        outputs: Vec::new(),
        results: to_value(&r),
    })
}

fn probe_bounds(ctx: &Ctx<'_>) -> Result<Outcome> {
    let model = ctx.model;
    let r = derivative_bound_probe(
        model.densities(),
        model.eps,
        ctx.config.numerics.probe_samples,
        ctx.seed,
        &model.rule,
    )?;
    let checks = vec![Check::new(
        "probes within envelopes",
        r.within(1.0),
        format!(
            "dg/dpi {:.3e} <= {:.3e}, jump Lipschitz {:.3e} <= {:.3e}, jump growth {:.3e} <= {:.3e}",
            r.max_dg_dpi,
            r.envelopes.dg_dpi,
            r.max_jump_lipschitz,
            r.envelopes.jump_lipschitz,
            r.max_jump_growth,
            r.envelopes.jump_growth
        ),
    )];
    let rows = vec![
        LongRow::new("probe", None, "max_dg_dpi", r.max_dg_dpi, None),
        LongRow::new("probe", None, "max_jump_lipschitz", r.max_jump_lipschitz, None),
        LongRow::new("probe", None, "max_jump_growth", r.max_jump_growth, None),
        LongRow::new("probe", None, "min_mixture", r.min_mixture, None),
        LongRow::new("probe", None, "max_mixture", r.max_mixture, None),
    ];
    Ok(Outcome {
        checks,
        rows,
        outputs: Vec::new(),
        results: to_value(&r),
    })
}
