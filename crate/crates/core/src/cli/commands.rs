//! Subcommand implementations. Each writes its reports under the output
//! directory and returns how the run ended.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::Loaded;
use super::report::{
    detect_intervals, empirical_rho, verify_solutions, write_rows, RoundSummary, SolutionsFile, SweepRow, SweepSummary,
    CAVEAT,
};
use super::Outcome;
use crate::discretization::{Discretization, Field, Grid1D};
use crate::energy::{energy, hessian_action, lambda_bounds, residual, HessianMode, ProblemSpec};
use crate::error::{Error, Result};
use crate::minimax::{
    estimate_theta, gap_check, BundleCloud, MinimaxReport, PhiFn, SampleCloud, ThetaEstimate, ThetaKind,
};
use crate::nonlinearity::{NonlinearityBundle, ScalarFn};
use crate::solver::{brute_force, find_all, match_sets, CriticalPointSet, SetMatch};

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

/// Sampled and refined `θ*` of the configured bundle.
pub fn theta_star(loaded: &Loaded) -> Result<ThetaEstimate> {
    let disc = Discretization::new(loaded.grid);
    let cfg = &loaded.config.minimax;
    let bc = BundleCloud::sample(&loaded.bundle, &disc, &cfg.cloud)?;
    let est = estimate_theta(&bc.cloud, &PhiFn::coupling(&loaded.bundle), ThetaKind::ThetaStar)?;
    bc.refine(&est, cfg.refine_iters)
}

fn sweep_round(loaded: &Loaded, lambdas: &[f64], mu: f64) -> Vec<(f64, Result<CriticalPointSet>)> {
    let cfg = &loaded.config.solver;
    lambdas
        .par_iter()
        .map(|&lambda| {
            let set = ProblemSpec::new(loaded.bundle.clone(), loaded.grid, mu, lambda).and_then(|s| find_all(&s, cfg));
            (lambda, set)
        })
        .collect()
}

/// λ-sweep over a fixed μ or a geometric μ-ladder, stopping at the first
/// round that shows an interval with at least three solutions per node.
pub fn sweep(loaded: &Loaded, out: &Path) -> Result<(SweepSummary, Outcome)> {
    fs::create_dir_all(out)?;
    let cfg = &loaded.config;
    let lambdas = cfg.lambdas(&loaded.bundle);
    let lambda_step = if lambdas.len() > 1 { lambdas[1] - lambdas[0] } else { 0.0 };
    let (mus, theta) = match cfg.sweep.mu {
        Some(mu) => (vec![mu], None),
        None => {
            let ladder = &cfg.sweep.ladder;
            let (start, theta) = match ladder.start {
                Some(s) => (s, None),
                None => {
                    let t = theta_star(loaded)?.value;
                    (1.5 * t, Some(t))
                }
            };
            ((0..ladder.max_rounds).map(|i| start * ladder.factor.powi(i as i32)).collect(), theta)
        }
    };

    let mut rounds = Vec::new();
    let mut last = None;
    for (round, &mu) in mus.iter().enumerate() {
        let results = sweep_round(loaded, &lambdas, mu);
        let rows: Vec<SweepRow> = results
            .iter()
            .map(|(l, r)| match r {
                Ok(set) => SweepRow::from_set(*l, set),
                Err(e) => SweepRow::failed(*l, e),
            })
            .collect();
        let rows_file = format!("rows_round{round}.csv");
        write_rows(&rows, fs::File::create(out.join(&rows_file))?)?;
        let intervals = detect_intervals(&rows, cfg.sweep.min_run);
        let found = !intervals.is_empty();
        rounds.push(RoundSummary { round, mu, rows_file, detected_intervals: intervals });
        last = Some((mu, rows, results));
        if found {
            break;
        }
    }
    let (mu, rows, results) = last.expect("at least one round");
    write_rows(&rows, fs::File::create(out.join("rows.csv"))?)?;
    let sets: Vec<(f64, CriticalPointSet)> = results.into_iter().filter_map(|(l, r)| r.ok().map(|s| (l, s))).collect();
    let solutions = SolutionsFile::new(&loaded.bundle, loaded.grid, mu, cfg.solver.newton_tol, &sets);
    write_json(&out.join("solutions.json"), &solutions)?;

    let detected_intervals = rounds.last().map(|r| r.detected_intervals.clone()).unwrap_or_default();
    let summary = SweepSummary {
        detected: !detected_intervals.is_empty(),
        mu,
        lambda_step,
        empirical_rho: empirical_rho(&rows, &detected_intervals),
        detected_intervals,
        theta_star_estimate: theta,
        rounds,
        caveat: CAVEAT.to_string(),
    };
    write_json(&out.join("summary.json"), &summary)?;

    for r in &summary.rounds {
        let shown: Vec<String> = r.detected_intervals.iter().map(|iv| format!("[{}, {}]", iv.lo, iv.hi)).collect();
        println!(
            "round {} mu {}: intervals {}",
            r.round,
            r.mu,
            if shown.is_empty() { "none".into() } else { shown.join(" ") }
        );
    }
    let verification = verify_solutions(&solutions)?;
    if !verification.passed() {
        eprintln!("stored solutions fail re-verification: {:?}", verification.failures);
        return Ok((summary, Outcome::CheckFailed));
    }
    let outcome = if summary.detected { Outcome::Success } else { Outcome::NoDetection };
    Ok((summary, outcome))
}

/// Single `(λ, μ)` search.
pub fn solve(loaded: &Loaded, out: &Path) -> Result<(CriticalPointSet, Outcome)> {
    let sc = loaded
        .config
        .solve
        .as_ref()
        .ok_or_else(|| Error::Config("the solve command needs a `solve` section".into()))?;
    let spec = ProblemSpec::new(loaded.bundle.clone(), loaded.grid, sc.mu, sc.lambda)
        .map_err(|e| Error::Config(e.to_string()))?;
    let set = find_all(&spec, &loaded.config.solver)?;
    fs::create_dir_all(out)?;
    let file = SolutionsFile::new(
        &loaded.bundle,
        loaded.grid,
        sc.mu,
        loaded.config.solver.newton_tol,
        &[(sc.lambda, set.clone())],
    );
    write_json(&out.join("solutions.json"), &file)?;
    set.write_csv(fs::File::create(out.join("points.csv"))?)?;
    for (i, p) in set.points.iter().enumerate() {
        println!("{i}: energy {} norm {} residual {:e}", p.energy, p.norm, p.residual_norm);
    }
    Ok((set, Outcome::Success))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckLine {
    pub check: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl CheckLine {
    fn new(check: String, value: f64, threshold: f64) -> Self {
        Self { check, value, threshold, passed: value <= threshold }
    }
}

fn random_field(grid: Grid1D, rng: &mut ChaCha8Rng, radius: f64) -> Field {
    let c: Vec<f64> = (0..grid.n_interior()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let f = Field::new(grid, c).expect("length matches grid");
    let n = f.norm();
    f.scaled(radius / n)
}

/// `|vᵀr − FD| / (1 + |vᵀr|)` with a central difference of the energy.
pub fn gradient_error(spec: &ProblemSpec, u: &Field, v: &Field, step: f64, fault: f64) -> Result<f64> {
    let rv = (1.0 + fault) * v.dot(&residual(spec, u)?);
    let fd = (energy(spec, &u.axpy(step, v))?.total - energy(spec, &u.axpy(-step, v))?.total) / (2.0 * step);
    Ok((rv - fd).abs() / (1.0 + rv.abs()))
}

/// Residual against energy differences, the μ = 0 quadratic case, and the
/// analytic Hessian against differences of the residual.
pub fn gradcheck(loaded: &Loaded, out: &Path) -> Result<(Vec<CheckLine>, Outcome)> {
    let cfg = &loaded.config.gradcheck;
    let fault = cfg.fault_scale.unwrap_or(0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(loaded.config.seed);
    let (lo, hi) = lambda_bounds(&loaded.bundle);
    let (lo, hi) = (0.8 * lo, 0.8 * hi);
    let grid = loaded.grid;
    let mut lines = Vec::new();
    for d in 0..cfg.draws {
        let lambda = rng.random_range(lo..=hi);
        let mu = rng.random_range(0.0..100.0);
        let spec = ProblemSpec::new(loaded.bundle.clone(), grid, mu, lambda)?;
        let radius = rng.random_range(0.1..2.0);
        let u = random_field(grid, &mut rng, radius);
        let v = random_field(grid, &mut rng, 1.0);
        lines.push(CheckLine::new(format!("gradient[{d}]"), gradient_error(&spec, &u, &v, cfg.step, fault)?, cfg.tol));
    }

    let b = &loaded.bundle;
    let quadratic =
        NonlinearityBundle::new(b.source.clone(), ScalarFn::zero(), ScalarFn::affine(1.0, 0.0), b.coupling.clone())?;
    let qspec = ProblemSpec::new(quadratic, grid, 0.0, 0.0)?;
    for d in 0..cfg.draws {
        let radius = rng.random_range(0.05..0.3);
        let u = random_field(grid, &mut rng, radius);
        let v = random_field(grid, &mut rng, 1.0);
        lines.push(CheckLine::new(
            format!("quadratic[{d}]"),
            gradient_error(&qspec, &u, &v, cfg.step, fault)?,
            cfg.quadratic_tol,
        ));
    }

    if b.is_smooth() {
        for d in 0..cfg.draws.min(5) {
            let lambda = rng.random_range(lo..=hi);
            let mu = rng.random_range(1.0..100.0);
            let spec = ProblemSpec::new(b.clone(), grid, mu, lambda)?;
            let radius = rng.random_range(0.1..2.0);
            let u = random_field(grid, &mut rng, radius);
            let v = random_field(grid, &mut rng, 1.0);
            let w = random_field(grid, &mut rng, 1.0);
            let an = spec.clone().with_hessian_mode(HessianMode::Analytic);
            let fd = spec.with_hessian_mode(HessianMode::FiniteDifference);
            let hv: Vec<f64> = hessian_action(&an, &u, &v)?.into_iter().map(|x| (1.0 + fault) * x).collect();
            let hf = hessian_action(&fd, &u, &v)?;
            let scale = hv.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
            let err = hv.iter().zip(&hf).fold(0.0f64, |m, (a, c)| m.max((a - c).abs())) / scale;
            lines.push(CheckLine::new(format!("hessian[{d}]"), err, cfg.hessian_tol));
            let hw = hessian_action(&an, &u, &w)?;
            let (vhw, whv) = (v.dot(&hw), w.dot(&hessian_action(&an, &u, &v)?));
            lines.push(CheckLine::new(format!("symmetry[{d}]"), (vhw - whv).abs() / (1.0 + vhw.abs()), 1e-10));
        }
    }

    for l in &lines {
        println!(
            "{:<14} {:>12.3e}  <= {:<8.0e} {}",
            l.check,
            l.value,
            l.threshold,
            if l.passed { "PASS" } else { "FAIL" }
        );
    }
    fs::create_dir_all(out)?;
    write_json(&out.join("gradcheck.json"), &lines)?;
    let outcome = if lines.iter().all(|l| l.passed) { Outcome::Success } else { Outcome::CheckFailed };
    Ok((lines, outcome))
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub search_count: usize,
    pub oracle_count: usize,
    pub candidates: usize,
    pub resolution_warnings: usize,
    pub matching: SetMatch,
}

/// Brute-force scan against the multi-start search on a tiny grid.
pub fn oracle(loaded: &Loaded, out: &Path) -> Result<(OracleReport, Outcome)> {
    let oc = &loaded.config.oracle;
    if loaded.grid.n_interior() > 3 {
        return Err(Error::Config(format!("oracle needs grid.n <= 3, got {}", loaded.grid.n_interior())));
    }
    let spec = ProblemSpec::new(loaded.bundle.clone(), loaded.grid, oc.mu, oc.lambda)
        .map_err(|e| Error::Config(e.to_string()))?;
    let solver = &loaded.config.solver;
    let brute = brute_force(&spec, &oc.brute, solver).map_err(|e| match e {
        Error::InvalidParameter(m) => Error::Config(m),
        other => other,
    })?;
    let search = find_all(&spec, solver)?;
    let matching = match_sets(&search, &brute.set, oc.match_tol);
    for &(i, j, d) in &matching.matched {
        println!("matched search[{i}] ~ oracle[{j}] (distance {d:.2e}) {:?}", search.points[i].u.coeffs());
    }
    for &i in &matching.only_left {
        println!("only in search: {:?}", search.points[i].u.coeffs());
    }
    for &j in &matching.only_right {
        println!("missed by search: {:?}", brute.set.points[j].u.coeffs());
    }
    let outcome = if matching.is_match() { Outcome::Success } else { Outcome::CheckFailed };
    let report = OracleReport {
        search_count: search.len(),
        oracle_count: brute.set.len(),
        candidates: brute.candidates,
        resolution_warnings: brute.warnings.len(),
        matching,
    };
    fs::create_dir_all(out)?;
    write_json(&out.join("oracle.json"), &report)?;
    Ok((report, outcome))
}

#[derive(Debug, Clone, Serialize)]
pub struct MinimaxOutput {
    pub theta: Option<ThetaEstimate>,
    pub report: MinimaxReport,
}

fn minimax_cloud(loaded: &Loaded) -> Result<(SampleCloud, Option<BundleCloud>)> {
    let mc = &loaded.config.minimax;
    if let Some(points) = &mc.points {
        return Ok((SampleCloud::synthetic(points).map_err(|e| Error::Config(e.to_string()))?, None));
    }
    if let Some(path) = &mc.cloud_csv {
        let file =
            fs::File::open(loaded.base.join(path)).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        return Ok((SampleCloud::read_csv(file)?, None));
    }
    let bc = BundleCloud::sample(&loaded.bundle, &Discretization::new(loaded.grid), &mc.cloud)?;
    Ok((bc.cloud.clone(), Some(bc)))
}

/// Threshold estimate and minimax gap scan on a cloud.
pub fn minimax(loaded: &Loaded, out: &Path) -> Result<(MinimaxOutput, Outcome)> {
    let mc = &loaded.config.minimax;
    let (cloud, bundle_cloud) = minimax_cloud(loaded)?;
    let phi = match &mc.phi {
        Some(p) => PhiFn::from_spec(p).map_err(|e| Error::Config(e.to_string()))?,
        None => PhiFn::coupling(&loaded.bundle),
    };
    let theta = match &bundle_cloud {
        Some(bc) => {
            let est = estimate_theta(&bc.cloud, &phi, ThetaKind::ThetaStar)?;
            Some(bc.refine(&est, mc.refine_iters)?)
        }
        None => match estimate_theta(&cloud, &phi, ThetaKind::ThetaHat) {
            Ok(t) => Some(t),
            Err(Error::EmptyAdmissible) if mc.mu.is_some() => None,
            Err(e) => return Err(e),
        },
    };
    if let Some(t) = &theta {
        if t.negative {
            eprintln!("warning: threshold estimate {} is negative", t.value);
        }
    }
    let mu = match (mc.mu, &theta) {
        (Some(mu), _) => mu,
        (None, Some(t)) => mc.mu_factor * t.value,
        (None, None) => unreachable!("theta is only skipped when mu is given"),
    };
    let report = gap_check(&cloud, &phi, mu, mc.lambda_grid)?;
    println!("lhs {} rhs {} gap {} certified {}", report.lhs, report.rhs, report.gap, report.certified);
    if let Some(t) = &theta {
        println!("theta estimate {} (sampled {})", t.value, t.sampled_value);
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    fs::create_dir_all(out)?;
    cloud.write_csv(fs::File::create(out.join("cloud.csv"))?)?;
    let must_certify = theta.as_ref().is_some_and(|t| mu > t.value);
    let outcome = if must_certify && !report.certified { Outcome::CheckFailed } else { Outcome::Success };
    let output = MinimaxOutput { theta, report };
    write_json(&out.join("minimax.json"), &output)?;
    Ok((output, outcome))
}

#[derive(Debug, Clone, Serialize)]
pub struct ThetaReport {
    pub theta: Option<ThetaEstimate>,
    pub theta_star: ThetaEstimate,
    pub theta_hat: ThetaEstimate,
}

/// All three threshold estimates on the bundle cloud.
pub fn theta(loaded: &Loaded, out: &Path) -> Result<(ThetaReport, Outcome)> {
    let mc = &loaded.config.minimax;
    let bc = BundleCloud::sample(&loaded.bundle, &Discretization::new(loaded.grid), &mc.cloud)?;
    let phi = PhiFn::coupling(&loaded.bundle);
    let star = estimate_theta(&bc.cloud, &phi, ThetaKind::ThetaStar)?;
    let theta_star = bc.refine(&star, mc.refine_iters)?;
    let theta_hat = estimate_theta(&bc.cloud, &phi, ThetaKind::ThetaHat)?;
    let theta = match estimate_theta(&bc.cloud, &phi, ThetaKind::Theta) {
        Ok(t) => Some(t),
        Err(Error::EmptyAdmissible) => None,
        Err(e) => return Err(e),
    };
    println!("theta* {} (sampled {})", theta_star.value, theta_star.sampled_value);
    println!("theta^ {}", theta_hat.value);
    if let Some(t) = &theta {
        println!("theta  {}", t.value);
    }
    let report = ThetaReport { theta, theta_star, theta_hat };
    fs::create_dir_all(out)?;
    write_json(&out.join("theta.json"), &report)?;
    Ok((report, Outcome::Success))
}
