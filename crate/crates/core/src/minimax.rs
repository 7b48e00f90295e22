//! Threshold ratios and minimax gap certificates on finite sample clouds.
//!
//! A cloud is a finite list of pairs `(γ(x), J(x))`. For a bundle, `γ(u)` is
//! `½K(‖u‖²) − ∫G(u)` and `J(u) = ∫F(u)`; the threshold ratios compare `γ`
//! with `φ(J)` and the minimax quantities scan
//! `γ(x) − μφ(J(x) − λ)` over a λ-grid.

use std::io::{Read, Write};

use argmin::core::{CostFunction, Executor};
use argmin::solver::neldermead::NelderMead;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discretization::{Discretization, Field, Primitive};
use crate::error::{Error, Result};
use crate::nonlinearity::{NonlinearityBundle, ScalarFn, ScalarFnSpec};

/// Relative shrink of the open λ-interval.
pub const INTERVAL_MARGIN: f64 = 1e-9;
/// A gap is certified when it exceeds this.
pub const GAP_TOL: f64 = 1e-9;
const GOLDEN_ITERS: usize = 200;
const ROUNDING_SLACK: f64 = 16.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CloudEntry {
    pub gamma: f64,
    pub j: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum CloudSource {
    Synthetic,
    File,
    Bundle { n_interior: usize, samples: usize, seed: u64 },
}

/// Finite sample of `(γ, J)` pairs that always contains `(0, 0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleCloud {
    entries: Vec<CloudEntry>,
    source: CloudSource,
}

impl SampleCloud {
    pub fn new(entries: Vec<CloudEntry>, source: CloudSource) -> Result<Self> {
        if !entries.iter().any(|e| e.gamma == 0.0 && e.j == 0.0) {
            return Err(Error::InvalidParameter("cloud must contain the entry (0, 0)".into()));
        }
        if let Some(e) = entries.iter().find(|e| !e.gamma.is_finite() || !e.j.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite cloud entry ({}, {})", e.gamma, e.j)));
        }
        Ok(Self { entries, source })
    }

    pub fn synthetic(pairs: &[(f64, f64)]) -> Result<Self> {
        Self::new(pairs.iter().map(|&(gamma, j)| CloudEntry { gamma, j }).collect(), CloudSource::Synthetic)
    }

    pub fn entries(&self) -> &[CloudEntry] {
        &self.entries
    }

    pub fn source(&self) -> &CloudSource {
        &self.source
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn j_range(&self) -> (f64, f64) {
        self.entries.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| (lo.min(e.j), hi.max(e.j)))
    }

    pub fn min_gamma(&self) -> f64 {
        self.entries.iter().map(|e| e.gamma).fold(f64::INFINITY, f64::min)
    }

    /// CSV with header `gamma,j`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for e in &self.entries {
            wr.serialize(e)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let entries = rd.deserialize().collect::<std::result::Result<Vec<CloudEntry>, _>>()?;
        Self::new(entries, CloudSource::File)
    }
}

/// The convex weight `φ` applied to `J − λ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Phi {
    /// `t²`
    Square,
    /// `eᵗ − t − 1`
    ExpShift,
    /// Primitive `H` of a coupling function.
    Primitive { h: ScalarFnSpec },
}

/// Evaluable form of [`Phi`].
#[derive(Debug, Clone)]
pub enum PhiFn {
    Square,
    ExpShift,
    Primitive(ScalarFn),
}

impl PhiFn {
    pub fn from_spec(spec: &Phi) -> Result<Self> {
        Ok(match spec {
            Phi::Square => Self::Square,
            Phi::ExpShift => Self::ExpShift,
            Phi::Primitive { h } => Self::Primitive(ScalarFn::from_spec(h)?),
        })
    }

    pub fn coupling(bundle: &NonlinearityBundle) -> Self {
        Self::Primitive(bundle.coupling.clone())
    }

    pub fn spec(&self) -> Phi {
        match self {
            Self::Square => Phi::Square,
            Self::ExpShift => Phi::ExpShift,
            Self::Primitive(h) => Phi::Primitive { h: h.spec() },
        }
    }

    /// `φ(t)`, `+∞` outside the domain.
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Self::Square => t * t,
            Self::ExpShift => t.exp_m1() - t,
            Self::Primitive(h) => {
                if h.domain().contains(t) {
                    h.primitive(t).unwrap_or(f64::INFINITY)
                } else {
                    f64::INFINITY
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThetaKind {
    /// Infimum over entries with `J` strictly inside `(inf J, sup J)` and nonzero.
    Theta,
    /// Bundle threshold: infimum over entries with `J ≠ 0`.
    ThetaStar,
    /// Abstract threshold: infimum over entries with `J ≠ 0`.
    ThetaHat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaEstimate {
    pub kind: ThetaKind,
    pub value: f64,
    pub witness: CloudEntry,
    /// Cloud index of the witness; `None` after refinement moved it.
    pub witness_index: Option<usize>,
    /// Best sampled ratio before refinement.
    pub sampled_value: f64,
    /// Set when the value is negative, which the multiplicity statement excludes.
    pub negative: bool,
}

fn admissible(kind: ThetaKind, e: &CloudEntry, lo: f64, hi: f64) -> bool {
    e.j != 0.0 && (kind != ThetaKind::Theta || (e.j > lo && e.j < hi))
}

/// Minimum of `γ/φ(J)` over the admissible entries.
pub fn estimate_theta(cloud: &SampleCloud, phi: &PhiFn, kind: ThetaKind) -> Result<ThetaEstimate> {
    let (lo, hi) = cloud.j_range();
    let mut best: Option<(usize, f64)> = None;
    for (i, e) in cloud.entries.iter().enumerate() {
        if !admissible(kind, e, lo, hi) {
            continue;
        }
        let p = phi.eval(e.j);
        if !(p > 0.0 && p.is_finite()) {
            continue;
        }
        let ratio = e.gamma / p;
        if best.is_none_or(|(_, b)| ratio < b) {
            best = Some((i, ratio));
        }
    }
    let (i, value) = best.ok_or(Error::EmptyAdmissible)?;
    Ok(ThetaEstimate {
        kind,
        value,
        witness: cloud.entries[i],
        witness_index: Some(i),
        sampled_value: value,
        negative: value < 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CloudConfig {
    pub samples: usize,
    pub radius_min: f64,
    pub radius_max: f64,
    /// Number of sine modes in each sampled field.
    pub modes: usize,
    pub seed: u64,
}

impl Default for CloudConfig {
    fn default() -> Self {
        Self { samples: 10_000, radius_min: 1e-3, radius_max: 5.0, modes: 8, seed: 0 }
    }
}

/// Cloud sampled from a bundle, keeping the sine-mode coefficients of every
/// entry so that witnesses can be refined.
#[derive(Debug, Clone)]
pub struct BundleCloud {
    pub cloud: SampleCloud,
    pub modes: Vec<Vec<f64>>,
    bundle: NonlinearityBundle,
    disc: Discretization,
}

impl BundleCloud {
    /// Sample `samples − 1` smooth random fields plus the zero field. Fields
    /// are `Σ a_m sin(mπx)` with `a_m ~ N(0, 1)/m`, rescaled to H¹₀ norms on
    /// a geometric ladder from `radius_min` to `radius_max`.
    pub fn sample(bundle: &NonlinearityBundle, disc: &Discretization, cfg: &CloudConfig) -> Result<Self> {
        if cfg.samples < 2 || cfg.modes == 0 {
            return Err(Error::InvalidParameter("a bundle cloud needs at least 2 samples and 1 mode".into()));
        }
        if !(cfg.radius_min > 0.0 && cfg.radius_max >= cfg.radius_min) {
            return Err(Error::InvalidParameter(format!(
                "radius ladder [{}, {}] is not positive and ordered",
                cfg.radius_min, cfg.radius_max
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut raw = Vec::with_capacity(cfg.samples);
        raw.push(vec![0.0; cfg.modes]);
        for _ in 1..cfg.samples {
            raw.push(
                (1..=cfg.modes)
                    .map(|m| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        z / m as f64
                    })
                    .collect::<Vec<f64>>(),
            );
        }
        let ratio = cfg.radius_max / cfg.radius_min;
        let rungs = (cfg.samples - 1).max(2) - 1;
        let modes: Vec<Vec<f64>> = raw
            .into_iter()
            .enumerate()
            .map(|(i, a)| {
                if i == 0 {
                    return Ok(a);
                }
                let r = cfg.radius_min * ratio.powf((i - 1) as f64 / rungs as f64);
                let n = mode_field(disc, &a)?.norm();
                Ok(a.into_iter().map(|x| x * r / n).collect())
            })
            .collect::<Result<_>>()?;
        let entries =
            modes.par_iter().map(|a| cloud_entry(bundle, disc, &mode_field(disc, a)?)).collect::<Result<Vec<_>>>()?;
        let cloud = SampleCloud::new(
            entries,
            CloudSource::Bundle { n_interior: disc.grid.n_interior(), samples: cfg.samples, seed: cfg.seed },
        )?;
        Ok(Self { cloud, modes, bundle: bundle.clone(), disc: disc.clone() })
    }

    /// Local Nelder–Mead descent of `γ/H(J)` over the sine-mode coefficients
    /// from the sampled witness. Never returns a value above the sampled one.
    pub fn refine(&self, est: &ThetaEstimate, iterations: u64) -> Result<ThetaEstimate> {
        let Some(idx) = est.witness_index else { return Ok(est.clone()) };
        if iterations == 0 {
            return Ok(est.clone());
        }
        let phi = PhiFn::coupling(&self.bundle);
        let cost = RatioCost { cloud: self, phi: &phi };
        let start = self.modes[idx].clone();
        let scale = start.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-6);
        let mut simplex = vec![start.clone()];
        for k in 0..start.len() {
            let mut v = start.clone();
            v[k] += 0.1 * scale;
            simplex.push(v);
        }
        let solver =
            NelderMead::new(simplex).with_sd_tolerance(0.0).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        let res = Executor::new(cost, solver)
            .configure(|s| s.max_iters(iterations))
            .run()
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        let state = res.state();
        let Some(best) = state.best_param.as_ref() else { return Ok(est.clone()) };
        if !(state.best_cost < est.value) {
            return Ok(est.clone());
        }
        let entry = cloud_entry(&self.bundle, &self.disc, &mode_field(&self.disc, best)?)?;
        let value = entry.gamma / phi.eval(entry.j);
        if !(value < est.value) {
            return Ok(est.clone());
        }
        Ok(ThetaEstimate { value, witness: entry, witness_index: None, negative: value < 0.0, ..est.clone() })
    }
}

struct RatioCost<'a> {
    cloud: &'a BundleCloud,
    phi: &'a PhiFn,
}

impl CostFunction for RatioCost<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, a: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        let ratio = mode_field(&self.cloud.disc, a)
            .and_then(|u| cloud_entry(&self.cloud.bundle, &self.cloud.disc, &u))
            .map(|e| {
                let p = self.phi.eval(e.j);
                if e.j != 0.0 && p > 0.0 && p.is_finite() {
                    e.gamma / p
                } else {
                    f64::INFINITY
                }
            })
            .unwrap_or(f64::INFINITY);
        Ok(ratio)
    }
}

fn mode_field(disc: &Discretization, a: &[f64]) -> Result<Field> {
    disc.interpolate(|x| a.iter().enumerate().map(|(m, c)| c * ((m + 1) as f64 * std::f64::consts::PI * x).sin()).sum())
}

/// `(½K(‖u‖²) − ∫G(u), ∫F(u))`
pub fn cloud_entry(bundle: &NonlinearityBundle, disc: &Discretization, u: &Field) -> Result<CloudEntry> {
    let gamma =
        0.5 * bundle.kirchhoff.primitive(u.norm_sq())? - disc.integrate_composed(&Primitive(&bundle.local), u)?;
    let j = disc.integrate_composed(&Primitive(&bundle.source), u)?;
    Ok(CloudEntry { gamma, j })
}

/// Quantities of the ε/δ/ν argument for one witness with `γ − μφ(J) < 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapCertificate {
    pub witness_index: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub nu: f64,
    /// `max(−ε, −μν)`
    pub bound: f64,
    /// Whether the scanned lhs respects the bound.
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaGrid {
    pub lo: f64,
    pub hi: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimaxReport {
    /// `sup_λ inf_x (γ − μφ(J − λ))`
    pub lhs: f64,
    /// `inf_x sup_λ (γ − μφ(J − λ))`
    pub rhs: f64,
    pub gap: f64,
    pub certified: bool,
    pub mu: f64,
    pub lambda_grid: LambdaGrid,
    /// λ attaining `lhs` and the entry attaining the inner infimum there.
    pub lhs_lambda: f64,
    pub lhs_entry: usize,
    pub certificate: Option<GapCertificate>,
    pub warnings: Vec<String>,
}

fn inner_inf(cloud: &SampleCloud, phi: &PhiFn, mu: f64, lambda: f64) -> (f64, usize) {
    let mut best = (f64::INFINITY, 0);
    for (i, e) in cloud.entries.iter().enumerate() {
        let v = e.gamma - mu * phi.eval(e.j - lambda);
        if v < best.0 {
            best = (v, i);
        }
    }
    best
}

/// Scans both sides of the minimax inequality.
///
/// The λ-range is the open interval `(min J, max J)` shrunk by a relative
/// margin. The outer supremum of the lhs is taken over the uniform grid and
/// then refined by golden-section search next to the best node (the inner
/// infimum is concave in λ for convex `φ`). For the rhs every entry's inner
/// supremum is taken over the grid together with the entry's own `J`, a
/// closure point of the interval where `φ(0) = 0` is attained.
pub fn gap_check(cloud: &SampleCloud, phi: &PhiFn, mu: f64, grid_size: usize) -> Result<MinimaxReport> {
    if !(mu >= 0.0 && mu.is_finite()) {
        return Err(Error::InvalidParameter(format!("mu must be finite and >= 0, got {mu}")));
    }
    if grid_size < 2 {
        return Err(Error::InvalidParameter("lambda grid needs at least 2 points".into()));
    }
    let (jmin, jmax) = cloud.j_range();
    if !(jmax > jmin) {
        return Err(Error::DegenerateInterval { lo: jmin, hi: jmax });
    }
    let margin = INTERVAL_MARGIN * (jmax - jmin);
    let (lo, hi) = (jmin + margin, jmax - margin);
    let step = (hi - lo) / (grid_size - 1) as f64;
    let lambdas: Vec<f64> = (0..grid_size).map(|i| lo + step * i as f64).collect();

    let mut warnings = Vec::new();
    let interior: Vec<f64> = {
        let mut v: Vec<f64> = cloud.entries.iter().map(|e| e.j).filter(|&j| j != 0.0 && j > jmin && j < jmax).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    };
    if interior.len() < 2 {
        warnings.push("fewer than two distinct nonzero J values strictly inside the J range".to_string());
    }

    let scan: Vec<(f64, usize)> = lambdas.par_iter().map(|&l| inner_inf(cloud, phi, mu, l)).collect();
    let (mut k, mut lhs) = (0, f64::NEG_INFINITY);
    for (i, (v, _)) in scan.iter().enumerate() {
        if *v > lhs {
            lhs = *v;
            k = i;
        }
    }
    let mut lhs_lambda = lambdas[k];
    let mut lhs_entry = scan[k].1;
    // golden-section refinement of the concave outer function
    let (mut a, mut b) = (lambdas[k.saturating_sub(1)], lambdas[(k + 1).min(grid_size - 1)]);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let f = |l: f64| inner_inf(cloud, phi, mu, l);
    let (mut x1, mut x2) = (b - g * (b - a), a + g * (b - a));
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..GOLDEN_ITERS {
        if b - a <= 1e-15 * (1.0 + a.abs()) {
            break;
        }
        if f1.0 > f2.0 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = f(x2);
        }
    }
    for (x, (v, i)) in [(x1, f1), (x2, f2)] {
        if v > lhs {
            lhs = v;
            lhs_lambda = x;
            lhs_entry = i;
        }
    }

    let phi_grid_min = |j: f64| lambdas.iter().map(|&l| phi.eval(j - l)).fold(phi.eval(0.0), f64::min);
    let rhs = cloud.entries.par_iter().map(|e| e.gamma - mu * phi_grid_min(e.j)).reduce(|| f64::INFINITY, f64::min);

    let gap = rhs - lhs;
    let certificate = certificate(cloud, phi, mu, &lambdas, lhs);
    Ok(MinimaxReport {
        lhs,
        rhs,
        gap,
        certified: gap > GAP_TOL,
        mu,
        lambda_grid: LambdaGrid { lo, hi, size: grid_size },
        lhs_lambda,
        lhs_entry,
        certificate,
        warnings,
    })
}

fn certificate(cloud: &SampleCloud, phi: &PhiFn, mu: f64, lambdas: &[f64], lhs: f64) -> Option<GapCertificate> {
    let (idx, value) = cloud
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| (i, e.gamma - mu * phi.eval(e.j)))
        .min_by(|a, b| a.1.total_cmp(&b.1))?;
    if !(value < 0.0) {
        return None;
    }
    let w = cloud.entries[idx];
    let epsilon = -0.5 * value;
    let below = |l: f64| w.gamma - mu * phi.eval(w.j - l) < -epsilon;
    // largest δ on a dyadic scan with the witness below −ε on [−δ, δ]
    let span = lambdas[lambdas.len() - 1] - lambdas[0];
    let mut delta = 0.0;
    let mut trial = span;
    for _ in 0..60 {
        let ok = (0..=64).all(|s| {
            let l = -trial + 2.0 * trial * s as f64 / 64.0;
            below(l)
        });
        if ok {
            delta = trial;
            break;
        }
        trial *= 0.5;
    }
    if delta == 0.0 {
        return None;
    }
    let nu = lambdas.iter().filter(|&&l| l.abs() > delta).map(|&l| phi.eval(-l)).fold(f64::INFINITY, f64::min);
    let bound = (-epsilon).max(-mu * nu);
    Some(GapCertificate { witness_index: idx, epsilon, delta, nu, bound, holds: lhs <= bound })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpCouplingCondition {
    pub holds: bool,
    /// `inf(ψ − μ(e^J − 1))` and its sample index.
    pub left_inf: f64,
    pub left_witness: usize,
    /// `inf(ψ − μJ)` and its sample index.
    pub right_inf: f64,
    pub right_witness: usize,
}

/// Checks `inf(ψ − μ(e^J − 1)) < 0 ≤ inf(ψ − μJ)` on paired samples. A
/// right-hand value counts as nonnegative when it is above minus a few ulps
/// of its terms.
pub fn exp_coupling_condition(psi: &[f64], j: &[f64], mu: f64) -> Result<ExpCouplingCondition> {
    if psi.len() != j.len() || psi.is_empty() {
        return Err(Error::InvalidParameter(format!("paired samples needed, got {} and {}", psi.len(), j.len())));
    }
    let argmin = |f: &dyn Fn(usize) -> f64| {
        (0..psi.len()).map(|i| (f(i), i)).fold((f64::INFINITY, 0), |a, b| if b.0 < a.0 { b } else { a })
    };
    let (left_inf, left_witness) = argmin(&|i| psi[i] - mu * j[i].exp_m1());
    let (right_inf, right_witness) = argmin(&|i| psi[i] - mu * j[i]);
    // the sign test on the right tolerates rounding in the samples themselves
    let right_nonneg = (0..psi.len()).all(|i| {
        let slack = ROUNDING_SLACK * f64::EPSILON * (1.0 + psi[i].abs() + (mu * j[i]).abs());
        psi[i] - mu * j[i] >= -slack
    });
    Ok(ExpCouplingCondition { holds: left_inf < 0.0 && right_nonneg, left_inf, left_witness, right_inf, right_witness })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalImage {
    pub lo: f64,
    pub hi: f64,
    pub empty: bool,
}

/// Image `(μe^{−sup B}, μe^{−inf B})` of the open interval `B` under
/// `ν ↦ μe^{−ν}`.
pub fn exp_coupling_interval_map(mu: f64, b_lo: f64, b_hi: f64) -> IntervalImage {
    let (lo, hi) = (mu * (-b_hi).exp(), mu * (-b_lo).exp());
    let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
    IntervalImage { lo, hi, empty: !(b_lo < b_hi) || !(mu > 0.0) }
}

/// Largest entrywise discrepancy between `μ(e^{j−ν} − 1)j' + μj'` and
/// `μe^{−ν}e^{j}j'`.
pub fn exp_coupling_identity(j: f64, jprime: &[f64], mu: f64, nu: f64) -> f64 {
    let a = (j - nu).exp_m1();
    let b = (-nu).exp() * j.exp();
    jprime.iter().map(|&p| (mu * a * p + mu * p - mu * b * p).abs()).fold(0.0, f64::max)
}

/// Size of the terms in [`exp_coupling_identity`], used to make it relative.
pub fn exp_coupling_identity_scale(j: f64, jprime: &[f64], mu: f64, nu: f64) -> f64 {
    let pmax = jprime.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    mu.abs() * pmax * 1f64.max((j - nu).exp()).max((-nu).exp() * j.exp())
}
