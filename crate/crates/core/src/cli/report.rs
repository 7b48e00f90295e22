//! Sweep records, their on-disk form and the re-verification of stored
//! solutions.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::discretization::{max_abs, Field, Grid1D};
use crate::energy::{residual, ProblemSpec};
use crate::error::{Error, Result};
use crate::nonlinearity::{BundleSpec, NonlinearityBundle, ScanConfig};
use crate::solver::CriticalPointSet;

/// Fixed statement attached to every sweep summary.
pub const CAVEAT: &str = "existence of the parameter interval is guaranteed for every mu above the threshold, \
but its size is not; failing to detect it at this grid resolution is inconclusive";

pub const ROWS_HEADER: [&str; 5] = ["lambda", "count", "energies", "norms", "max_residual"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub count: usize,
    pub energies: Vec<f64>,
    pub norms: Vec<f64>,
    pub max_residual: f64,
    pub error: Option<String>,
}

impl SweepRow {
    pub fn from_set(lambda: f64, set: &CriticalPointSet) -> Self {
        Self {
            lambda,
            count: set.len(),
            energies: set.points.iter().map(|p| p.energy).collect(),
            norms: set.points.iter().map(|p| p.norm).collect(),
            max_residual: set.max_residual(),
            error: None,
        }
    }

    pub fn failed(lambda: f64, err: &Error) -> Self {
        Self { lambda, count: 0, energies: vec![], norms: vec![], max_residual: f64::NAN, error: Some(err.to_string()) }
    }
}

/// Shortest round-trip form, switching to exponent notation for very small
/// or very large magnitudes.
pub fn fmt_num(x: f64) -> String {
    let a = x.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e15).contains(&a) {
        format!("{x:e}")
    } else {
        x.to_string()
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|&x| fmt_num(x)).collect::<Vec<_>>().join(";")
}

pub fn write_rows<W: Write>(rows: &[SweepRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(ROWS_HEADER)?;
    for r in rows {
        wr.write_record([
            fmt_num(r.lambda),
            r.count.to_string(),
            join(&r.energies),
            join(&r.norms),
            fmt_num(r.max_residual),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

/// Maximal run of consecutive λ-nodes with at least three solutions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectedInterval {
    pub lo: f64,
    pub hi: f64,
    pub nodes: usize,
    pub min_count: usize,
}

pub fn detect_intervals(rows: &[SweepRow], min_run: usize) -> Vec<DetectedInterval> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < rows.len() {
        if rows[i].count < 3 {
            i += 1;
            continue;
        }
        let start = i;
        while i < rows.len() && rows[i].count >= 3 {
            i += 1;
        }
        let run = &rows[start..i];
        if run.len() >= min_run.max(1) {
            out.push(DetectedInterval {
                lo: run[0].lambda,
                hi: run[run.len() - 1].lambda,
                nodes: run.len(),
                min_count: run.iter().map(|r| r.count).min().unwrap_or(0),
            });
        }
    }
    out
}

/// Largest solution norm over the rows inside the detected intervals.
pub fn empirical_rho(rows: &[SweepRow], intervals: &[DetectedInterval]) -> Option<f64> {
    rows.iter()
        .filter(|r| intervals.iter().any(|iv| r.lambda >= iv.lo && r.lambda <= iv.hi))
        .flat_map(|r| r.norms.iter().copied())
        .reduce(f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: usize,
    pub mu: f64,
    pub rows_file: String,
    pub detected_intervals: Vec<DetectedInterval>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub detected: bool,
    pub mu: f64,
    pub lambda_step: f64,
    pub detected_intervals: Vec<DetectedInterval>,
    pub empirical_rho: Option<f64>,
    pub theta_star_estimate: Option<f64>,
    pub rounds: Vec<RoundSummary>,
    pub caveat: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredPoint {
    pub coeffs: Vec<f64>,
    pub energy: f64,
    pub norm: f64,
    pub residual_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredLambda {
    pub lambda: f64,
    pub points: Vec<StoredPoint>,
}

/// Solutions of one sweep round, self-contained enough to be re-verified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionsFile {
    pub bundle: BundleSpec,
    pub n_interior: usize,
    pub mu: f64,
    pub newton_tol: f64,
    pub entries: Vec<StoredLambda>,
}

impl SolutionsFile {
    pub fn new(
        bundle: &NonlinearityBundle,
        grid: Grid1D,
        mu: f64,
        newton_tol: f64,
        sets: &[(f64, CriticalPointSet)],
    ) -> Self {
        let entries = sets
            .iter()
            .map(|(lambda, set)| StoredLambda {
                lambda: *lambda,
                points: set
                    .points
                    .iter()
                    .map(|p| StoredPoint {
                        coeffs: p.u.coeffs().to_vec(),
                        energy: p.energy,
                        norm: p.norm,
                        residual_norm: p.residual_norm,
                    })
                    .collect(),
            })
            .collect();
        Self { bundle: bundle.spec(), n_interior: grid.n_interior(), mu, newton_tol, entries }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub checked: usize,
    pub max_residual: f64,
    /// `(lambda, point index, re-evaluated residual)` over the tolerance.
    pub failures: Vec<(f64, usize, f64)>,
}

impl Verification {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Recomputes the residual of every stored solution from scratch.
pub fn verify_solutions(file: &SolutionsFile) -> Result<Verification> {
    let bundle = NonlinearityBundle::from_spec(&file.bundle, &ScanConfig::default())?;
    let grid = Grid1D::new(file.n_interior)?;
    let mut v = Verification { checked: 0, max_residual: 0.0, failures: Vec::new() };
    for entry in &file.entries {
        let spec = ProblemSpec::new(bundle.clone(), grid, file.mu, entry.lambda)?;
        for (i, p) in entry.points.iter().enumerate() {
            let u = Field::new(grid, p.coeffs.clone())?;
            let r = max_abs(&residual(&spec, &u)?);
            v.checked += 1;
            v.max_residual = v.max_residual.max(r);
            if !(r <= file.newton_tol) {
                v.failures.push((entry.lambda, i, r));
            }
        }
    }
    Ok(v)
}

pub fn verify_report(dir: &Path) -> Result<Verification> {
    let text = std::fs::read_to_string(dir.join("solutions.json"))?;
    verify_solutions(&serde_json::from_str(&text)?)
}
