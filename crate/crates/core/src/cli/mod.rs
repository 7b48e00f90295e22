//! Command-line harness.
//!
//! Exit codes: 0 success or detection, 1 a check failed (gradcheck, oracle,
//! minimax, report verification), 2 configuration error, 3 no interval
//! detected after the last sweep round, 4 numerical failure.

pub mod commands;
pub mod config;
pub mod report;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{Loaded, RunConfig};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    CheckFailed,
    NoDetection,
}

impl Outcome {
    pub fn code(self) -> i32 {
        match self {
            Outcome::Success => 0,
            Outcome::CheckFailed => 1,
            Outcome::NoDetection => 3,
        }
    }
}

pub fn error_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        _ => 4,
    }
}

#[derive(Debug, Parser)]
#[command(name = "kirchhoff", version, about = "Critical points of nonlocal Kirchhoff-type energies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (default: configured `out`, else `out`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: configured `workers`, else all cores).
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// λ-sweep with optional μ-escalation.
    Sweep(Common),
    /// All critical points at one (λ, μ).
    Solve(Common),
    /// Residual and Hessian consistency checks.
    Gradcheck(Common),
    /// Brute-force oracle against the search on a grid with at most 3 nodes.
    Oracle(Common),
    /// Threshold estimate and minimax gap check.
    Minimax(Common),
    /// Threshold estimates on a sampled cloud.
    Theta(Common),
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Sweep(c)
            | Command::Solve(c)
            | Command::Gradcheck(c)
            | Command::Oracle(c)
            | Command::Minimax(c)
            | Command::Theta(c) => c,
        }
    }
}

fn load(common: &Common) -> Result<Loaded> {
    let text = std::fs::read_to_string(&common.config)
        .map_err(|e| Error::Config(format!("{}: {e}", common.config.display())))?;
    let mut cfg = RunConfig::from_json(&text)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(w) = common.workers {
        cfg.workers = Some(w);
    }
    let base = common.config.parent().map(PathBuf::from).unwrap_or_default();
    cfg.prepare(base)
}

/// Runs a parsed command and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match execute(&cli.command) {
        Ok(o) => o.code(),
        Err(e) => {
            eprintln!("error: {e}");
            error_code(&e)
        }
    }
}

pub fn execute(command: &Command) -> Result<Outcome> {
    let common = command.common();
    let loaded = load(common)?;
    let out = common.out.clone().or_else(|| loaded.config.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = loaded.config.workers {
        pool = pool.num_threads(w);
    }
    let pool = pool.build().map_err(|e| Error::Config(e.to_string()))?;
    pool.install(|| match command {
        Command::Sweep(_) => commands::sweep(&loaded, &out).map(|r| r.1),
        Command::Solve(_) => commands::solve(&loaded, &out).map(|r| r.1),
        Command::Gradcheck(_) => commands::gradcheck(&loaded, &out).map(|r| r.1),
        Command::Oracle(_) => commands::oracle(&loaded, &out).map(|r| r.1),
        Command::Minimax(_) => commands::minimax(&loaded, &out).map(|r| r.1),
        Command::Theta(_) => commands::theta(&loaded, &out).map(|r| r.1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;

    const BENCH: &str = r#""bundle": {"f": {"kind": "cosine", "params": [1, 1]},
                  "k": {"kind": "affine-k", "params": [1, 1]},
                  "h": {"kind": "rational-h"}}"#;

    fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
        let path = dir.join(name);
        std::fs::write(&path, format!("{{{BENCH}, {body}}}")).unwrap();
        path
    }

    fn exit_code(cmd: &str, config: &Path, out: &Path) -> i32 {
        let cli = Cli::try_parse_from([
            "kirchhoff",
            cmd,
            "--config",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
        .unwrap();
        run(cli)
    }

    #[test]
    fn configuration_errors_exit_with_2() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        assert_eq!(exit_code("sweep", &dir.path().join("missing.json"), &out), 2);
        let typo = write_config(dir.path(), "typo.json", r#""grid": {"n": 7}, "sweep": {"lambda_cuont": 3}"#);
        assert_eq!(exit_code("sweep", &typo, &out), 2);
        let big = write_config(dir.path(), "big.json", r#""grid": {"n": 4}"#);
        assert_eq!(exit_code("oracle", &big, &out), 2);
        let no_solve = write_config(dir.path(), "nosolve.json", r#""grid": {"n": 7}"#);
        assert_eq!(exit_code("solve", &no_solve, &out), 2);
    }

    #[test]
    fn sweep_without_coupling_detects_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_config(
            dir.path(),
            "mu0.json",
            r#""grid": {"n": 7}, "sweep": {"mu": 0, "lambda_count": 5, "lambda_range": [-0.5, 0.5]}, "solver": {"n_starts": 4}"#,
        );
        let out = dir.path().join("out");
        assert_eq!(exit_code("sweep", &cfg, &out), 3);
        let rows = std::fs::read_to_string(out.join("rows.csv")).unwrap();
        let counts: Vec<&str> = rows.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
        assert_eq!(counts, vec!["1"; 5]);
        assert!(report::verify_report(&out).unwrap().passed());
    }

    #[test]
    fn tampered_solutions_fail_verification() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_config(dir.path(), "solve.json", r#""grid": {"n": 7}, "solve": {"lambda": 0, "mu": 100}"#);
        let out = dir.path().join("out");
        assert_eq!(exit_code("solve", &cfg, &out), 0);
        assert!(report::verify_report(&out).unwrap().passed());
        let path = out.join("solutions.json");
        let mut file: report::SolutionsFile = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        file.entries[0].points[0].coeffs[3] += 1e-3;
        std::fs::write(&path, serde_json::to_string(&file).unwrap()).unwrap();
        let v = report::verify_report(&out).unwrap();
        assert_eq!(v.failures.len(), 1);
    }

    #[test]
    fn gradcheck_fault_injection_exits_with_1() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let ok = write_config(dir.path(), "ok.json", r#""grid": {"n": 9}, "gradcheck": {"draws": 4}"#);
        assert_eq!(exit_code("gradcheck", &ok, &out), 0);
        let bad =
            write_config(dir.path(), "bad.json", r#""grid": {"n": 9}, "gradcheck": {"draws": 4, "fault_scale": 1e-3}"#);
        assert_eq!(exit_code("gradcheck", &bad, &out), 1);
    }

    #[test]
    fn starved_search_fails_the_oracle() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let body = r#""grid": {"n": 2}, "oracle": {"mu": 400, "lambda": 0.1, "brute": {"resolution": 101}}"#;
        let full = write_config(dir.path(), "full.json", body);
        assert_eq!(exit_code("oracle", &full, &out), 0);
        let starved =
            write_config(dir.path(), "starved.json", &format!(r#"{body}, "solver": {{"n_starts": 1}}, "seed": 1"#));
        assert_eq!(exit_code("oracle", &starved, &out), 1);
    }

    #[test]
    fn minimax_on_explicit_points() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let cfg = write_config(
            dir.path(),
            "mm.json",
            r#""grid": {"n": 7}, "minimax": {"points": [[0, 0], [1, 1]], "phi": {"kind": "square"}, "mu": 2}"#,
        );
        assert_eq!(exit_code("minimax", &cfg, &out), 0);
        let v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out.join("minimax.json")).unwrap()).unwrap();
        assert!((v["report"]["lhs"].as_f64().unwrap() + 0.125).abs() < 1e-6);
        assert_eq!(v["report"]["rhs"].as_f64().unwrap(), 0.0);
        assert_eq!(v["report"]["certified"], true);
        assert!(out.join("cloud.csv").exists());
    }
}
