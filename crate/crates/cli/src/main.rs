//! Command-line front end: `expo <command> --config FILE [--seed N] [--out DIR]`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use expo_core::harness::{self, Command, RunRequest, Study};

#[derive(Parser)]
#[command(name = "expo", version = harness::VERSION, about = "Portfolio optimization with expert opinions")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// JSON config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 7)]
    seed: u64,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Config override as a dotted path, e.g. `numerics.paths=2000`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Market, signal and filter paths.
    Simulate,
    /// HJB solve on the grid.
    Solve {
        /// Regularization level.
        #[arg(long)]
        m: Option<f64>,
    },
    /// Monte Carlo reward of the policy in `study.policy`.
    Evaluate,
    /// Numerical checks.
    Study {
        #[arg(value_enum)]
        kind: StudyKind,
    },
    /// Density derivative and Lipschitz probes.
    Probe {
        #[arg(value_enum)]
        what: ProbeKind,
    },
    /// Validate the config and print derived quantities.
    Validate,
}

#[derive(Clone, Copy, ValueEnum)]
enum StudyKind {
    L2,
    Moments,
    Dpp,
    EpsOpt,
    Continuity,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProbeKind {
    Bounds,
}

fn command(cmd: &Cmd) -> Command {
    match cmd {
        Cmd::Simulate => Command::Simulate,
        Cmd::Solve { m } => Command::Solve { m: *m },
        Cmd::Evaluate => Command::Evaluate,
        Cmd::Study { kind } => Command::Study(match kind {
            StudyKind::L2 => Study::L2,
            StudyKind::Moments => Study::Moments,
            StudyKind::Dpp => Study::Dpp,
            StudyKind::EpsOpt => Study::EpsOpt,
            StudyKind::Continuity => Study::Continuity,
        }),
        Cmd::Probe { what: ProbeKind::Bounds } => Command::ProbeBounds,
        Cmd::Validate => Command::Validate,
    }
}

fn fail(kind: &str, message: String) -> ExitCode {
    let v = serde_json::json!({ "kind": kind, "message": message });
    eprintln!("{}", serde_json::to_string_pretty(&v).expect("json"));
    ExitCode::from(2)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let c = cli.common;
    let Some(config) = c.config else {
        return fail("ConfigError", "--config is required".into());
    };
    if let Some(n) = c.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return fail("ConfigError", format!("cannot set up {n} threads: {e}"));
        }
    }
    let req = RunRequest {
        command: command(&cli.command),
        config,
        overrides: c.overrides,
        seed: c.seed,
        out: c.out,
        threads: c.threads,
    };
    match harness::run(&req) {
        Ok(summary) => {
            for check in &summary.checks {
                let status = if check.passed { "pass" } else { "FAIL" };
                println!("[{status}] {}: {}", check.name, check.detail);
            }
            println!("wrote {} to {}", summary.outputs.join(", "), req.out.display());
            ExitCode::from(summary.exit_code() as u8)
        }
        Err(e) => {
            let v = harness::error_json(&e);
            eprintln!("{}", serde_json::to_string_pretty(&v).expect("json"));
            let _ = std::fs::create_dir_all(&req.out)
                .and_then(|_| std::fs::write(req.out.join("error.json"), v.to_string()));
            ExitCode::from(2)
        }
    }
}
