//! Search for multiple critical points of the discrete energy.

mod brute;
mod newton;

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use brute::{brute_force, BruteForceConfig, BruteForceResult, ResolutionWarning};
pub use newton::{deflated_newton, descend, newton_refine, Deflation, NewtonRun};

use crate::discretization::{Field, Grid1D};
use crate::energy::{energy, ProblemSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub n_starts: usize,
    pub seed: u64,
    /// Acceptance threshold on the ∞-norm of the residual.
    pub newton_tol: f64,
    pub max_newton: usize,
    pub deflation_power: f64,
    pub deflation_shift: f64,
    /// H¹₀ distance under which two points are the same.
    pub distinct_tol: f64,
    /// Largest H¹₀ norm of a start.
    pub start_radius: f64,
    /// Descent hands over to Newton at `handoff_factor · newton_tol`.
    pub handoff_factor: f64,
    pub descend_max_iter: usize,
    /// Cap on the descent step length along the preconditioned direction.
    pub max_step: f64,
    pub max_deflated_newton: usize,
    pub max_deflation_rounds: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            n_starts: 64,
            seed: 0,
            newton_tol: 1e-10,
            max_newton: 50,
            deflation_power: 2.0,
            deflation_shift: 1.0,
            distinct_tol: 1e-5,
            start_radius: 10.0,
            handoff_factor: 1e3,
            descend_max_iter: 20_000,
            max_step: 1e3,
            max_deflated_newton: 100,
            max_deflation_rounds: 8,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("newton_tol", self.newton_tol),
            ("deflation_power", self.deflation_power),
            ("deflation_shift", self.deflation_shift),
            ("distinct_tol", self.distinct_tol),
            ("start_radius", self.start_radius),
            ("handoff_factor", self.handoff_factor),
            ("max_step", self.max_step),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if self.n_starts == 0 {
            return Err(Error::InvalidParameter("n_starts must be at least 1".into()));
        }
        Ok(())
    }
}

/// Where a critical point was first reached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    Start(usize),
    Deflation { round: usize, start: usize },
    Grid(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticalPoint {
    pub u: Field,
    pub energy: f64,
    pub norm: f64,
    pub residual_norm: f64,
    pub origin: Origin,
}

impl CriticalPoint {
    pub fn new(spec: &ProblemSpec, u: Field, residual_norm: f64, origin: Origin) -> Result<Self> {
        let energy = energy(spec, &u)?.total;
        let norm = u.norm();
        Ok(Self { u, energy, norm, residual_norm, origin })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PointRecord {
    coeffs: Vec<f64>,
    energy: f64,
    norm: f64,
    residual_norm: f64,
    origin: Origin,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SetRecord {
    n_interior: usize,
    max_norm: f64,
    points: Vec<PointRecord>,
}

/// Pairwise distinct critical points sorted by energy.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticalPointSet {
    pub points: Vec<CriticalPoint>,
    pub distinct_tol: f64,
}

impl CriticalPointSet {
    pub fn new(distinct_tol: f64) -> Self {
        Self { points: Vec::new(), distinct_tol }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index of a member within `distinct_tol` of `u`.
    pub fn find(&self, u: &Field) -> Option<usize> {
        self.points.iter().position(|p| p.u.h1_distance(u) <= self.distinct_tol)
    }

    /// Adds `p` unless it duplicates a member; returns whether it was added.
    pub fn insert(&mut self, p: CriticalPoint) -> bool {
        if self.find(&p.u).is_some() {
            return false;
        }
        self.points.push(p);
        true
    }

    pub fn sort_by_energy(&mut self) {
        self.points.sort_by(|a, b| a.energy.total_cmp(&b.energy).then(a.norm.total_cmp(&b.norm)));
    }

    /// Largest H¹₀ norm among the members (0 for an empty set).
    pub fn max_norm(&self) -> f64 {
        self.points.iter().map(|p| p.norm).fold(0.0, f64::max)
    }

    pub fn max_residual(&self) -> f64 {
        self.points.iter().map(|p| p.residual_norm).fold(0.0, f64::max)
    }

    pub fn min_pairwise_distance(&self) -> f64 {
        let mut m = f64::INFINITY;
        for (i, a) in self.points.iter().enumerate() {
            for b in &self.points[i + 1..] {
                m = m.min(a.u.h1_distance(&b.u));
            }
        }
        m
    }

    pub fn to_json(&self, grid: Grid1D) -> Result<String> {
        let rec = SetRecord {
            n_interior: grid.n_interior(),
            max_norm: self.max_norm(),
            points: self
                .points
                .iter()
                .map(|p| PointRecord {
                    coeffs: p.u.coeffs().to_vec(),
                    energy: p.energy,
                    norm: p.norm,
                    residual_norm: p.residual_norm,
                    origin: p.origin,
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&rec)?)
    }

    pub fn from_json(s: &str, distinct_tol: f64) -> Result<Self> {
        let rec: SetRecord = serde_json::from_str(s)?;
        let grid = Grid1D::new(rec.n_interior)?;
        let points = rec
            .points
            .into_iter()
            .map(|p| {
                Ok(CriticalPoint {
                    u: Field::new(grid, p.coeffs)?,
                    energy: p.energy,
                    norm: p.norm,
                    residual_norm: p.residual_norm,
                    origin: p.origin,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { points, distinct_tol })
    }

    /// One line per point: `index,energy,norm,residual_norm`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["index", "energy", "norm", "residual_norm"])?;
        for (i, p) in self.points.iter().enumerate() {
            wr.write_record([i.to_string(), p.energy.to_string(), p.norm.to_string(), p.residual_norm.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Deterministic starts: sign-symmetric pairs of Gaussian nodal vectors
/// rescaled to radii evenly spread in `(0, start_radius]`.
pub fn start_fields(grid: Grid1D, cfg: &SolverConfig) -> Vec<Field> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pairs = cfg.n_starts.div_ceil(2);
    let mut out = Vec::with_capacity(cfg.n_starts);
    for i in 0..pairs {
        let c: Vec<f64> = (0..grid.n_interior()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let w = Field::new(grid, c).expect("length matches grid");
        let radius = cfg.start_radius * (i + 1) as f64 / pairs as f64;
        let w = w.scaled(radius / w.norm());
        out.push(w.scaled(-1.0));
        out.push(w);
    }
    out.truncate(cfg.n_starts);
    // pushed as (-w, w): swap so the positive member comes first
    for pair in out.chunks_mut(2) {
        if pair.len() == 2 {
            pair.swap(0, 1);
        }
    }
    out
}

/// Multi-start descent and Newton refinement followed by rounds of
/// deflated Newton from the same starts, until a round adds nothing.
pub fn find_all(spec: &ProblemSpec, cfg: &SolverConfig) -> Result<CriticalPointSet> {
    cfg.validate()?;
    let starts = start_fields(spec.grid(), cfg);
    let mut set = CriticalPointSet::new(cfg.distinct_tol);

    let first: Vec<Option<CriticalPoint>> = starts
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let u = descend(spec, s, cfg).ok()?;
            newton_refine(spec, &u, cfg, Origin::Start(i)).ok().map(|r| r.point)
        })
        .collect();
    for p in first.into_iter().flatten() {
        set.insert(p);
    }

    for round in 1..=cfg.max_deflation_rounds {
        let known: Vec<Field> = set.points.iter().map(|p| p.u.clone()).collect();
        let defl = Deflation { known: &known, power: cfg.deflation_power, shift: cfg.deflation_shift };
        let found: Vec<Option<CriticalPoint>> = starts
            .par_iter()
            .enumerate()
            .map(|(i, s)| deflated_newton(spec, s, &defl, cfg, Origin::Deflation { round, start: i }).ok())
            .collect();
        let mut added = false;
        for p in found.into_iter().flatten() {
            added |= set.insert(p);
        }
        if !added {
            break;
        }
    }
    set.sort_by_energy();
    Ok(set)
}

/// Result of matching two solution sets point by point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SetMatch {
    /// `(index in left, index in right, nodal ∞-distance)`
    pub matched: Vec<(usize, usize, f64)>,
    pub only_left: Vec<usize>,
    pub only_right: Vec<usize>,
}

impl SetMatch {
    pub fn is_match(&self) -> bool {
        self.only_left.is_empty() && self.only_right.is_empty()
    }
}

/// Greedy nearest matching in the nodal ∞-distance with threshold `tol`.
pub fn match_sets(left: &CriticalPointSet, right: &CriticalPointSet, tol: f64) -> SetMatch {
    let mut taken = vec![false; right.len()];
    let mut matched = Vec::new();
    let mut only_left = Vec::new();
    for (i, p) in left.points.iter().enumerate() {
        let best = right
            .points
            .iter()
            .enumerate()
            .filter(|(j, _)| !taken[*j])
            .map(|(j, q)| (j, p.u.sub(&q.u).max_abs()))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        match best {
            Some((j, d)) if d <= tol => {
                taken[j] = true;
                matched.push((i, j, d));
            }
            _ => only_left.push(i),
        }
    }
    let only_right = (0..right.len()).filter(|j| !taken[*j]).collect();
    SetMatch { matched, only_left, only_right }
}
