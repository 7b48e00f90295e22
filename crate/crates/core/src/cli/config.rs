//! JSON run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::discretization::Grid1D;
use crate::energy::lambda_bounds;
use crate::error::{Error, Result};
use crate::minimax::{CloudConfig, Phi};
use crate::nonlinearity::{check_admissibility, AdmissibilityConfig, BundleSpec, NonlinearityBundle, ScanConfig};
use crate::solver::{BruteForceConfig, SolverConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Interior node count.
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LadderConfig {
    /// First μ; `1.5 θ*` estimated from the minimax cloud when absent.
    pub start: Option<f64>,
    pub factor: f64,
    pub max_rounds: usize,
}

impl Default for LadderConfig {
    fn default() -> Self {
        Self { start: None, factor: 2.0, max_rounds: 6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub lambda_count: usize,
    /// Closed range of λ; the admissible range `(alpha_f, beta_f)` when absent.
    pub lambda_range: Option<(f64, f64)>,
    /// Fixed μ. Takes precedence over the ladder.
    pub mu: Option<f64>,
    pub ladder: LadderConfig,
    /// Fewest consecutive λ-nodes with at least three solutions that count as
    /// an interval.
    pub min_run: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { lambda_count: 41, lambda_range: None, mu: None, ladder: LadderConfig::default(), min_run: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveConfig {
    pub lambda: f64,
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub draws: usize,
    pub step: f64,
    pub tol: f64,
    pub quadratic_tol: f64,
    pub hessian_tol: f64,
    /// Test hook: scales the residual by `1 + fault_scale` before comparing.
    pub fault_scale: Option<f64>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self { draws: 20, step: 1e-5, tol: 1e-6, quadratic_tol: 1e-12, hessian_tol: 1e-5, fault_scale: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub lambda: f64,
    pub mu: f64,
    pub brute: BruteForceConfig,
    /// Nodal ∞-distance for matching the two sets.
    pub match_tol: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { lambda: 0.0, mu: 50.0, brute: BruteForceConfig::default(), match_tol: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MinimaxConfig {
    pub cloud: CloudConfig,
    /// Explicit `(gamma, j)` pairs instead of a bundle-sampled cloud.
    pub points: Option<Vec<(f64, f64)>>,
    /// CSV cloud (`gamma,j`) instead of a bundle-sampled cloud.
    pub cloud_csv: Option<PathBuf>,
    /// `φ`; the primitive of the bundle's `h` when absent.
    pub phi: Option<Phi>,
    /// μ for the gap check; `mu_factor · θ` when absent.
    pub mu: Option<f64>,
    pub mu_factor: f64,
    pub lambda_grid: usize,
    pub refine_iters: u64,
}

impl Default for MinimaxConfig {
    fn default() -> Self {
        Self {
            cloud: CloudConfig { samples: 10_000, ..CloudConfig::default() },
            points: None,
            cloud_csv: None,
            phi: None,
            mu: None,
            mu_factor: 2.0,
            lambda_grid: 10_000,
            refine_iters: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub bundle: BundleSpec,
    pub grid: GridConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub solve: Option<SolveConfig>,
    #[serde(default)]
    pub gradcheck: GradcheckConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub minimax: MinimaxConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub workers: Option<usize>,
}

/// A configuration with its bundle built and validated.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: RunConfig,
    pub bundle: NonlinearityBundle,
    pub grid: Grid1D,
    /// Directory against which relative paths inside the config resolve.
    pub base: PathBuf,
}

fn config_err(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

impl RunConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Loaded> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_json(&text)?.prepare(base)
    }

    /// Builds the bundle and checks admissibility and parameter ranges.
    pub fn prepare(mut self, base: PathBuf) -> Result<Loaded> {
        self.solver.seed = self.seed;
        self.minimax.cloud.seed = self.seed;
        let bundle = NonlinearityBundle::from_spec(&self.bundle, &ScanConfig::default()).map_err(config_err)?;
        let report = check_admissibility(&bundle, &AdmissibilityConfig::default());
        if !report.passed {
            let clause = report.first_violation.map(|c| c.label()).unwrap_or("unknown");
            return Err(Error::Config(format!("bundle is not admissible: {clause} fails")));
        }
        let grid = Grid1D::new(self.grid.n).map_err(config_err)?;
        self.solver.validate().map_err(config_err)?;
        let (lo, hi) = lambda_bounds(&bundle);
        if let Some((a, b)) = self.sweep.lambda_range {
            if !(a >= lo && b <= hi && a <= b) {
                return Err(Error::Config(format!("lambda_range [{a}, {b}] must lie inside [{lo}, {hi}]")));
            }
        }
        if self.sweep.lambda_count == 0 {
            return Err(Error::Config("lambda_count must be at least 1".into()));
        }
        if self.sweep.ladder.factor <= 1.0 || self.sweep.ladder.max_rounds == 0 {
            return Err(Error::Config("ladder needs factor > 1 and at least one round".into()));
        }
        if self.sweep.mu.is_some_and(|m| !(m >= 0.0)) {
            return Err(Error::Config("sweep mu must be >= 0".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        Ok(Loaded { config: self, bundle, grid, base })
    }

    /// Uniform λ nodes of the sweep.
    pub fn lambdas(&self, bundle: &NonlinearityBundle) -> Vec<f64> {
        let (lo, hi) = self.sweep.lambda_range.unwrap_or_else(|| lambda_bounds(bundle));
        let n = self.sweep.lambda_count;
        if n == 1 {
            return vec![0.5 * (lo + hi)];
        }
        // built around the midpoint so a symmetric range gives exact ±λ pairs
        let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
        let m = (n - 1) as f64;
        (0..n).map(|i| mid + half * (2.0 * i as f64 - m) / m).collect()
    }
}
