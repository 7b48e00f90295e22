//! Catalog of scalar nonlinearities and their primitives.
//!
//! A problem instance is built from four scalar functions: the source
//! nonlinearity `f` (whose primitive drives the nonlocal term), the local
//! nonlinearity `g`, the Kirchhoff coefficient `k` and the coupling function
//! `h`. Every primitive is the integral from 0, so all of them vanish at 0.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{self, PRIMITIVE_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    /// `a cos(b x)`
    Cosine,
    /// `a exp(1 - 1/(1 - (x/w)^2))` on `|x| < w`, zero outside.
    Bump,
    /// `a / (1 + (x/w)^2)`
    Lorentzian,
    /// `t / (c^2 - t^2)` on `(-c, c)`.
    RationalH,
    /// `a + b t`
    AffineK,
    /// `a + b t^p` on `[0, inf)`.
    PowerK,
    /// `s t`
    IdentityH,
    /// `s (e^t - 1)`, whose primitive is `s (e^t - t - 1)`.
    ExpBased,
    /// Piecewise-linear interpolation of `(x, y)` knots, constant outside.
    CustomTable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Smoothness {
    C0,
    C1,
    Analytic,
}

/// Real interval; endpoints are excluded unless flagged closed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    #[serde(default)]
    pub closed_lo: bool,
    #[serde(default)]
    pub closed_hi: bool,
}

impl Interval {
    pub fn open(lo: f64, hi: f64) -> Self {
        Self { lo, hi, closed_lo: false, closed_hi: false }
    }

    pub fn real() -> Self {
        Self::open(f64::NEG_INFINITY, f64::INFINITY)
    }

    pub fn nonnegative() -> Self {
        Self { lo: 0.0, hi: f64::INFINITY, closed_lo: true, closed_hi: false }
    }

    pub fn contains(&self, x: f64) -> bool {
        let above = if self.closed_lo { x >= self.lo } else { x > self.lo };
        let below = if self.closed_hi { x <= self.hi } else { x < self.hi };
        above && below
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let l = if self.closed_lo { '[' } else { '(' };
        let r = if self.closed_hi { ']' } else { ')' };
        write!(f, "{l}{}, {}{r}", self.lo, self.hi)
    }
}

/// Serializable description of a catalog entry: a kind tag plus parameters.
///
/// Parameter layout per kind:
///
/// | kind           | params                    |
/// |----------------|---------------------------|
/// | `cosine`       | `[a, b]`                  |
/// | `bump`         | `[a, w]`, `w > 0`         |
/// | `lorentzian`   | `[a, w]`, `w > 0`         |
/// | `rational-h`   | `[c]`, `c > 0`            |
/// | `affine-k`     | `[a, b]`                  |
/// | `power-k`      | `[a, b, p]`, `p > 0`      |
/// | `identity-h`   | `[s]`                     |
/// | `exp-based`    | `[s]`                     |
/// | `custom-table` | `[x0, y0, x1, y1, ...]`   |
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarFnSpec {
    pub kind: Kind,
    #[serde(default)]
    pub params: Vec<f64>,
}

/// A catalogued real function with its metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarFn {
    kind: Kind,
    params: Vec<f64>,
    smoothness: Smoothness,
    monotone_nondecreasing: bool,
    known_bounds: Option<(f64, f64)>,
    domain: Interval,
}

fn expect_params(kind: Kind, params: &[f64], n: usize) -> Result<()> {
    if params.len() != n {
        return Err(Error::InvalidParameter(format!("{kind:?} takes {n} parameters, got {}", params.len())));
    }
    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::InvalidParameter(format!("{kind:?} parameters must be finite")));
    }
    Ok(())
}

impl ScalarFn {
    pub fn new(kind: Kind, params: Vec<f64>) -> Result<Self> {
        let real = Interval::real();
        let (smoothness, monotone, bounds, domain) = match kind {
            Kind::Cosine => {
                expect_params(kind, &params, 2)?;
                let (a, b) = (params[0], params[1]);
                let constant = a == 0.0 || b == 0.0;
                let bounds = if b == 0.0 { (a, a) } else { (-a.abs(), a.abs()) };
                (Smoothness::Analytic, constant, Some(bounds), real)
            }
            Kind::Bump | Kind::Lorentzian => {
                expect_params(kind, &params, 2)?;
                let (a, w) = (params[0], params[1]);
                if w <= 0.0 {
                    return Err(Error::InvalidParameter(format!("{kind:?} width must be positive")));
                }
                let s = if kind == Kind::Bump { Smoothness::C1 } else { Smoothness::Analytic };
                (s, a == 0.0, Some((a.min(0.0), a.max(0.0))), real)
            }
            Kind::RationalH => {
                expect_params(kind, &params, 1)?;
                let c = params[0];
                if c <= 0.0 {
                    return Err(Error::InvalidParameter("rational-h needs c > 0".into()));
                }
                (Smoothness::Analytic, true, None, Interval::open(-c, c))
            }
            Kind::AffineK => {
                expect_params(kind, &params, 2)?;
                let b = params[1];
                let bounds = (b == 0.0).then_some((params[0], params[0]));
                (Smoothness::Analytic, b >= 0.0, bounds, real)
            }
            Kind::PowerK => {
                expect_params(kind, &params, 3)?;
                let p = params[2];
                if p <= 0.0 {
                    return Err(Error::InvalidParameter("power-k needs p > 0".into()));
                }
                let s = if p >= 1.0 { Smoothness::C1 } else { Smoothness::C0 };
                (s, params[1] >= 0.0, None, Interval::nonnegative())
            }
            Kind::IdentityH | Kind::ExpBased => {
                expect_params(kind, &params, 1)?;
                (Smoothness::Analytic, params[0] >= 0.0, None, real)
            }
            Kind::CustomTable => {
                if params.len() < 4 || !params.len().is_multiple_of(2) {
                    return Err(Error::InvalidParameter("custom-table needs an even number (>= 4) of params".into()));
                }
                if params.iter().any(|p| !p.is_finite()) {
                    return Err(Error::InvalidParameter("custom-table values must be finite".into()));
                }
                let xs: Vec<f64> = params.iter().step_by(2).copied().collect();
                let ys: Vec<f64> = params.iter().skip(1).step_by(2).copied().collect();
                if xs.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::InvalidParameter("custom-table abscissae must be strictly increasing".into()));
                }
                let monotone = ys.windows(2).all(|w| w[0] <= w[1]);
                let lo = ys.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (Smoothness::C0, monotone, Some((lo, hi)), real)
            }
        };
        Ok(Self { kind, params, smoothness, monotone_nondecreasing: monotone, known_bounds: bounds, domain })
    }

    pub fn from_spec(spec: &ScalarFnSpec) -> Result<Self> {
        Self::new(spec.kind, spec.params.clone())
    }

    pub fn spec(&self) -> ScalarFnSpec {
        ScalarFnSpec { kind: self.kind, params: self.params.clone() }
    }

    pub fn cosine(a: f64, b: f64) -> Self {
        Self::new(Kind::Cosine, vec![a, b]).expect("finite cosine parameters")
    }

    /// The zero function, used for an absent local nonlinearity.
    pub fn zero() -> Self {
        Self::cosine(0.0, 1.0)
    }

    pub fn affine(a: f64, b: f64) -> Self {
        Self::new(Kind::AffineK, vec![a, b]).expect("finite affine parameters")
    }

    pub fn identity(s: f64) -> Self {
        Self::new(Kind::IdentityH, vec![s]).expect("finite identity slope")
    }

    pub fn rational_h(c: f64) -> Result<Self> {
        Self::new(Kind::RationalH, vec![c])
    }

    pub fn kind(&self) -> Kind {
        self.kind
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn smoothness(&self) -> Smoothness {
        self.smoothness
    }

    pub fn monotone_nondecreasing(&self) -> bool {
        self.monotone_nondecreasing
    }

    pub fn known_bounds(&self) -> Option<(f64, f64)> {
        self.known_bounds
    }

    pub fn domain(&self) -> Interval {
        self.domain
    }

    /// Evaluates the function. Callers are responsible for the domain.
    pub fn eval(&self, x: f64) -> f64 {
        let p = &self.params;
        match self.kind {
            Kind::Cosine => p[0] * (p[1] * x).cos(),
            Kind::Bump => {
                let s = (x / p[1]).powi(2);
                if s < 1.0 {
                    p[0] * (1.0 - 1.0 / (1.0 - s)).exp()
                } else {
                    0.0
                }
            }
            Kind::Lorentzian => p[0] / (1.0 + (x / p[1]).powi(2)),
            Kind::RationalH => x / (p[0] * p[0] - x * x),
            Kind::AffineK => p[0] + p[1] * x,
            Kind::PowerK => p[0] + p[1] * x.powf(p[2]),
            Kind::IdentityH => p[0] * x,
            Kind::ExpBased => p[0] * x.exp_m1(),
            Kind::CustomTable => table_eval(p, x),
        }
    }

    pub fn eval_checked(&self, x: f64) -> Result<f64> {
        self.check_domain(x)?;
        Ok(self.eval(x))
    }

    fn check_domain(&self, x: f64) -> Result<()> {
        if self.domain.contains(x) {
            Ok(())
        } else {
            Err(Error::Domain { value: x, domain: self.domain.to_string() })
        }
    }

    /// Derivative, when the catalog entry is at least C1.
    pub fn derivative(&self, x: f64) -> Option<f64> {
        let p = &self.params;
        let d = match self.kind {
            Kind::Cosine => -p[0] * p[1] * (p[1] * x).sin(),
            Kind::Bump => {
                let s = (x / p[1]).powi(2);
                if s < 1.0 {
                    let one_minus = 1.0 - s;
                    self.eval(x) * (-2.0 * x / (p[1] * p[1])) / (one_minus * one_minus)
                } else {
                    0.0
                }
            }
            Kind::Lorentzian => {
                let q = 1.0 + (x / p[1]).powi(2);
                -2.0 * p[0] * x / (p[1] * p[1] * q * q)
            }
            Kind::RationalH => {
                let c2 = p[0] * p[0];
                let den = c2 - x * x;
                (c2 + x * x) / (den * den)
            }
            Kind::AffineK => p[1],
            Kind::PowerK => {
                if self.smoothness == Smoothness::C0 {
                    return None;
                }
                p[1] * p[2] * x.powf(p[2] - 1.0)
            }
            Kind::IdentityH => p[0],
            Kind::ExpBased => p[0] * x.exp(),
            Kind::CustomTable => return None,
        };
        Some(d)
    }

    /// Closed-form primitive `∫_0^x`, when the catalog has one.
    pub fn closed_primitive(&self, x: f64) -> Option<f64> {
        let p = &self.params;
        let v = match self.kind {
            Kind::Cosine => {
                if p[1] == 0.0 {
                    p[0] * x
                } else {
                    p[0] / p[1] * (p[1] * x).sin()
                }
            }
            Kind::Lorentzian => p[0] * p[1] * (x / p[1]).atan(),
            // -1/2 ln(1 - t^2/c^2), written with ln_1p for accuracy near 0
            Kind::RationalH => -0.5 * (-(x * x) / (p[0] * p[0])).ln_1p(),
            Kind::AffineK => p[0] * x + 0.5 * p[1] * x * x,
            Kind::PowerK => p[0] * x + p[1] * x.powf(p[2] + 1.0) / (p[2] + 1.0),
            Kind::IdentityH => 0.5 * p[0] * x * x,
            Kind::ExpBased => p[0] * (x.exp_m1() - x),
            Kind::Bump | Kind::CustomTable => return None,
        };
        Some(v)
    }

    /// Kinks and support edges, where quadrature panels should be split.
    fn breakpoints(&self) -> Vec<f64> {
        match self.kind {
            Kind::Bump => vec![-self.params[1], self.params[1]],
            Kind::CustomTable => self.params.iter().step_by(2).copied().collect(),
            _ => Vec::new(),
        }
    }

    /// `∫_0^x` of the function by adaptive Gauss–Legendre quadrature.
    pub fn quadrature_primitive(&self, x: f64) -> Result<f64> {
        self.check_domain(x)?;
        self.integral(0.0, x)
    }

    /// `∫_a^b` by adaptive quadrature (no domain check on the endpoints).
    pub fn integral(&self, a: f64, b: f64) -> Result<f64> {
        let f = |t: f64| self.eval(t);
        quadrature::adaptive_split(&f, a, b, &self.breakpoints(), PRIMITIVE_TOL)
    }

    /// `∫_0^x`: closed form when available, adaptive quadrature otherwise.
    pub fn primitive(&self, x: f64) -> Result<f64> {
        self.check_domain(x)?;
        match self.closed_primitive(x) {
            Some(v) => Ok(v),
            None => self.integral(0.0, x),
        }
    }

    /// Exact `(inf, sup)` of the primitive over the real line, when known.
    pub fn primitive_bounds(&self) -> Option<(f64, f64)> {
        let p = &self.params;
        match self.kind {
            Kind::Cosine if p[0] == 0.0 => Some((0.0, 0.0)),
            Kind::Cosine if p[1] != 0.0 => {
                let m = (p[0] / p[1]).abs();
                Some((-m, m))
            }
            Kind::Lorentzian => {
                let m = (p[0] * p[1]).abs() * std::f64::consts::FRAC_PI_2;
                Some((-m, m))
            }
            _ => None,
        }
    }
}

fn table_eval(p: &[f64], x: f64) -> f64 {
    let n = p.len() / 2;
    let (x0, y0) = (p[0], p[1]);
    let (xn, yn) = (p[2 * n - 2], p[2 * n - 1]);
    if x <= x0 {
        return y0;
    }
    if x >= xn {
        return yn;
    }
    // knots are strictly increasing; binary search on the abscissae
    let (mut lo, mut hi) = (0usize, n - 1);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if p[2 * mid] <= x {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (xa, ya, xb, yb) = (p[2 * lo], p[2 * lo + 1], p[2 * hi], p[2 * hi + 1]);
    ya + (yb - ya) * (x - xa) / (xb - xa)
}

/// Settings of the sampling scan used when exact primitive bounds are not
/// catalogued.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    /// The scan covers `[-radius, radius]`.
    pub radius: f64,
    /// Number of scan points on each side of 0.
    pub half_points: usize,
    /// `|F|` above this is reported as unbounded.
    pub cap: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self { radius: 1e3, half_points: 5_000, cap: 1e9 }
    }
}

/// `(inf, sup, osc)` of the primitive of `f`; on (0,1) these equal
/// `alpha_f`, `beta_f`, `omega_f` since the domain has unit measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveBounds {
    pub alpha: f64,
    pub beta: f64,
    pub omega: f64,
    /// `false` when the values come from a sampling scan.
    pub exact: bool,
}

/// Cumulative primitive of `func` on the symmetric scan grid, returning
/// `(xs, primitive values)` sorted by abscissa with 0 included.
fn scan_primitive(func: &ScalarFn, scan: &ScanConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    let m = scan.half_points.max(1);
    let step = scan.radius / m as f64;
    let mut pos = Vec::with_capacity(m + 1);
    let mut neg = Vec::with_capacity(m);
    let mut acc = 0.0;
    pos.push((0.0, 0.0));
    for i in 1..=m {
        let (a, b) = ((i - 1) as f64 * step, i as f64 * step);
        acc += func.integral(a, b)?;
        pos.push((b, acc));
    }
    acc = 0.0;
    for i in 1..=m {
        let (a, b) = (-((i - 1) as f64) * step, -(i as f64) * step);
        acc += func.integral(a, b)?;
        neg.push((b, acc));
    }
    let mut pts: Vec<(f64, f64)> = neg.into_iter().rev().chain(pos).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(pts.into_iter().unzip())
}

/// Golden-section search for the maximum of `sign * F` on `[a, b]`, with
/// `F(x) = base + ∫_a^x f`.
fn refine_extremum(func: &ScalarFn, a: f64, b: f64, base: f64, sign: f64) -> Result<f64> {
    let phi = |x: f64| -> Result<f64> { Ok(sign * (base + func.integral(a, x)?)) };
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut lo, mut hi) = (a, b);
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let mut f1 = phi(x1)?;
    let mut f2 = phi(x2)?;
    for _ in 0..80 {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = phi(x2)?;
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = phi(x1)?;
        }
    }
    Ok(sign * f1.max(f2))
}

/// Bounds of the primitive of `f`, from catalog metadata when available and
/// from a refined sampling scan otherwise.
pub fn bounds_of_primitive(f: &ScalarFn, scan: &ScanConfig) -> Result<PrimitiveBounds> {
    if let Some((lo, hi)) = f.primitive_bounds() {
        if lo == 0.0 && hi == 0.0 {
            return Err(Error::Degenerate);
        }
        return Ok(PrimitiveBounds { alpha: lo, beta: hi, omega: hi - lo, exact: true });
    }
    let (xs, vals) = scan_primitive(f, scan)?;
    let nonzero = xs.iter().any(|&x| f.eval(x) != 0.0) || xs.windows(2).any(|w| f.eval(0.5 * (w[0] + w[1])) != 0.0);
    if !nonzero {
        return Err(Error::Degenerate);
    }
    let reached = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !reached.is_finite() || reached > scan.cap {
        return Err(Error::Unbounded { reached, cap: scan.cap });
    }
    let (imax, _) = argext(&vals, |a, b| a > b);
    let (imin, _) = argext(&vals, |a, b| a < b);
    let mut beta = vals[imax];
    let mut alpha = vals[imin];
    if imax > 0 && imax + 1 < xs.len() {
        beta = beta.max(refine_extremum(f, xs[imax - 1], xs[imax + 1], vals[imax - 1], 1.0)?);
    }
    if imin > 0 && imin + 1 < xs.len() {
        alpha = alpha.min(refine_extremum(f, xs[imin - 1], xs[imin + 1], vals[imin - 1], -1.0)?);
    }
    let (alpha, beta) = (alpha.min(0.0), beta.max(0.0));
    Ok(PrimitiveBounds { alpha, beta, omega: beta - alpha, exact: false })
}

fn argext(v: &[f64], better: impl Fn(f64, f64) -> bool) -> (usize, f64) {
    let mut best = (0, v[0]);
    for (i, &x) in v.iter().enumerate().skip(1) {
        if better(x, best.1) {
            best = (i, x);
        }
    }
    best
}

/// Unique `t >= 0` with `t k(t^2) = s`, by bracketed bisection.
pub fn radial_inverse(k: &ScalarFn, s: f64) -> Result<f64> {
    if !(s >= 0.0) || !s.is_finite() {
        return Err(Error::InvalidParameter(format!("radial inverse needs finite s >= 0, got {s}")));
    }
    if s == 0.0 {
        return Ok(0.0);
    }
    let map = |t: f64| t * k.eval(t * t);
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut doublings = 0;
    while !(map(hi) >= s) {
        lo = hi;
        hi *= 2.0;
        doublings += 1;
        if doublings > 1000 || !hi.is_finite() {
            return Err(Error::Bracket { target: s, doublings });
        }
    }
    for _ in 0..2200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if map(mid) < s {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (rl, rh) = ((map(lo) - s).abs(), (map(hi) - s).abs());
    Ok(if rl < rh { lo } else { hi })
}

/// Which primitive of the bundle to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Slot {
    /// `F`, primitive of the source nonlinearity `f`.
    Source,
    /// `G`, primitive of the local nonlinearity `g`.
    Local,
    /// `K`, primitive of the Kirchhoff coefficient `k`.
    Kirchhoff,
    /// `H`, primitive of the coupling function `h`.
    Coupling,
}

/// Serializable selection of the four catalog entries.
///
/// A `rational-h` coupling with no parameters takes `c = omega_f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleSpec {
    pub f: ScalarFnSpec,
    #[serde(default)]
    pub g: Option<ScalarFnSpec>,
    pub k: ScalarFnSpec,
    pub h: ScalarFnSpec,
}

/// The tuple `(f, g, k, h)` with cached bounds of the primitive of `f`.
#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearityBundle {
    pub source: ScalarFn,
    pub local: ScalarFn,
    pub kirchhoff: ScalarFn,
    pub coupling: ScalarFn,
    pub bounds: PrimitiveBounds,
}

impl NonlinearityBundle {
    pub fn new(source: ScalarFn, local: ScalarFn, kirchhoff: ScalarFn, coupling: ScalarFn) -> Result<Self> {
        Self::with_scan(source, local, kirchhoff, coupling, &ScanConfig::default())
    }

    pub fn with_scan(
        source: ScalarFn,
        local: ScalarFn,
        kirchhoff: ScalarFn,
        coupling: ScalarFn,
        scan: &ScanConfig,
    ) -> Result<Self> {
        let bounds = bounds_of_primitive(&source, scan)?;
        Ok(Self { source, local, kirchhoff, coupling, bounds })
    }

    pub fn from_spec(spec: &BundleSpec, scan: &ScanConfig) -> Result<Self> {
        let source = ScalarFn::from_spec(&spec.f)?;
        let bounds = bounds_of_primitive(&source, scan)?;
        let local = match &spec.g {
            Some(g) => ScalarFn::from_spec(g)?,
            None => ScalarFn::zero(),
        };
        let kirchhoff = ScalarFn::from_spec(&spec.k)?;
        let coupling = if spec.h.kind == Kind::RationalH && spec.h.params.is_empty() {
            ScalarFn::rational_h(bounds.omega)?
        } else {
            ScalarFn::from_spec(&spec.h)?
        };
        Ok(Self { source, local, kirchhoff, coupling, bounds })
    }

    pub fn spec(&self) -> BundleSpec {
        BundleSpec {
            f: self.source.spec(),
            g: Some(self.local.spec()),
            k: self.kirchhoff.spec(),
            h: self.coupling.spec(),
        }
    }

    /// The sine benchmark: `f = cos`, `g = 0`, `k(t) = 1 + t` and the
    /// rational coupling `h(t) = t / (omega_f^2 - t^2)` with `omega_f = 2`.
    pub fn sine_benchmark() -> Self {
        let source = ScalarFn::cosine(1.0, 1.0);
        let coupling = ScalarFn::rational_h(2.0).expect("positive c");
        Self::new(source, ScalarFn::zero(), ScalarFn::affine(1.0, 1.0), coupling).expect("cosine has bounded primitive")
    }

    pub fn alpha(&self) -> f64 {
        self.bounds.alpha
    }

    pub fn beta(&self) -> f64 {
        self.bounds.beta
    }

    pub fn omega(&self) -> f64 {
        self.bounds.omega
    }

    /// The open interval `(-omega_f, omega_f)` on which `h` is used.
    pub fn h_domain(&self) -> Interval {
        Interval::open(-self.bounds.omega, self.bounds.omega)
    }

    pub fn function(&self, slot: Slot) -> &ScalarFn {
        match slot {
            Slot::Source => &self.source,
            Slot::Local => &self.local,
            Slot::Kirchhoff => &self.kirchhoff,
            Slot::Coupling => &self.coupling,
        }
    }

    /// `∫_0^xi` of the selected function, with `H` restricted to the
    /// coupling domain `(-omega_f, omega_f)`.
    pub fn eval_primitive(&self, slot: Slot, xi: f64) -> Result<f64> {
        if slot == Slot::Coupling && !self.h_domain().contains(xi) {
            return Err(Error::Domain { value: xi, domain: self.h_domain().to_string() });
        }
        self.function(slot).primitive(xi)
    }

    /// Whether the analytic Hessian is available (every entry at least C1).
    pub fn is_smooth(&self) -> bool {
        [&self.source, &self.local, &self.kirchhoff, &self.coupling].iter().all(|f| f.smoothness() >= Smoothness::C1)
    }
}

/// Hypotheses checked by [`check_admissibility`], in checking order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Clause {
    SourceNonZero,
    SourcePrimitiveBounded,
    LocalPrimitiveBoundedAbove,
    KirchhoffPositive,
    KirchhoffNondecreasing,
    CouplingDefined,
    CouplingNondecreasing,
    CouplingZeroOnlyAtZero,
}

impl Clause {
    pub fn label(&self) -> &'static str {
        match self {
            Clause::SourceNonZero => "f≢0",
            Clause::SourcePrimitiveBounded => "sup|F|<+∞",
            Clause::LocalPrimitiveBoundedAbove => "sup G<+∞",
            Clause::KirchhoffPositive => "k(t)>0",
            Clause::KirchhoffNondecreasing => "k non-decreasing",
            Clause::CouplingDefined => "h defined on (-ω_f, ω_f)",
            Clause::CouplingNondecreasing => "h non-decreasing",
            Clause::CouplingZeroOnlyAtZero => "h⁻¹(0)={0}",
        }
    }
}

impl fmt::Display for Clause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityConfig {
    /// Sample count for each scanned function.
    pub samples: usize,
    /// `k` is sampled on `(0, t_max]`.
    pub t_max: f64,
    pub scan: ScanConfig,
}

impl Default for AdmissibilityConfig {
    fn default() -> Self {
        Self { samples: 10_000, t_max: 100.0, scan: ScanConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClauseCheck {
    pub clause: Clause,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub passed: bool,
    pub first_violation: Option<Clause>,
    pub checks: Vec<ClauseCheck>,
    /// Empirical `sup |F|` over the scan.
    pub sup_abs_source_primitive: f64,
    /// Empirical `sup G` over the scan.
    pub sup_local_primitive: f64,
}

/// Checks the hypotheses on `(f, g, k, h)` on deterministic sample grids:
/// `samples` points of `(0, t_max]` for `k`, `samples` interior points of
/// `(-omega_f, omega_f)` plus 0 for `h`, and the primitive scan of
/// `[-R, R]` for `F` and `G`. Violations are reported, never raised.
pub fn check_admissibility(bundle: &NonlinearityBundle, cfg: &AdmissibilityConfig) -> AdmissibilityReport {
    let mut checks = Vec::new();
    let mut push = |clause, passed, detail: String| checks.push(ClauseCheck { clause, passed, detail });

    let n = cfg.samples.max(2);
    let scan = cfg.scan;

    let source_scan = scan_primitive(&bundle.source, &scan);
    let (sup_abs_f, f_nonzero) = match &source_scan {
        Ok((xs, vals)) => {
            (vals.iter().fold(0.0f64, |m, v| m.max(v.abs())), xs.iter().any(|&x| bundle.source.eval(x) != 0.0))
        }
        Err(_) => (f64::INFINITY, true),
    };
    push(Clause::SourceNonZero, f_nonzero, "sampled f on the scan grid".into());
    push(
        Clause::SourcePrimitiveBounded,
        sup_abs_f.is_finite() && sup_abs_f <= scan.cap,
        format!("sup|F| = {sup_abs_f:e} on [-{}, {}]", scan.radius, scan.radius),
    );

    let sup_g = match scan_primitive(&bundle.local, &scan) {
        Ok((_, vals)) => vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        Err(_) => f64::INFINITY,
    };
    push(Clause::LocalPrimitiveBoundedAbove, sup_g.is_finite() && sup_g <= scan.cap, format!("sup G = {sup_g:e}"));

    let ts: Vec<f64> = (1..=n).map(|i| cfg.t_max * i as f64 / n as f64).collect();
    let ks: Vec<f64> = ts.iter().map(|&t| bundle.kirchhoff.eval(t)).collect();
    let bad_k = ts.iter().zip(&ks).find(|(_, &v)| !(v > 0.0));
    push(
        Clause::KirchhoffPositive,
        bad_k.is_none(),
        bad_k.map_or("k > 0 on all samples".into(), |(t, v)| format!("k({t}) = {v}")),
    );
    let drop_k = ks.windows(2).position(|w| w[1] < w[0]);
    push(
        Clause::KirchhoffNondecreasing,
        drop_k.is_none(),
        drop_k.map_or("non-decreasing on all samples".into(), |i| format!("k decreases after t = {}", ts[i])),
    );

    let omega = bundle.omega();
    let hs: Vec<f64> = (0..n).map(|i| -omega + 2.0 * omega * (i as f64 + 0.5) / n as f64).collect();
    let outside = hs.iter().find(|&&t| !bundle.coupling.domain().contains(t));
    push(
        Clause::CouplingDefined,
        outside.is_none(),
        outside.map_or("h defined on all samples".into(), |t| format!("h undefined at {t}")),
    );
    let hv: Vec<f64> = hs.iter().map(|&t| bundle.coupling.eval(t)).collect();
    let drop_h = hv.windows(2).position(|w| !(w[1] >= w[0]));
    push(
        Clause::CouplingNondecreasing,
        drop_h.is_none(),
        drop_h.map_or("non-decreasing on all samples".into(), |i| format!("h decreases after t = {}", hs[i])),
    );
    let h0 = bundle.coupling.eval(0.0);
    let zero_elsewhere = hs.iter().zip(&hv).find(|(&t, &v)| t != 0.0 && v == 0.0);
    let zero_ok = h0 == 0.0 && zero_elsewhere.is_none();
    let detail = if h0 != 0.0 {
        format!("h(0) = {h0}")
    } else if let Some((t, _)) = zero_elsewhere {
        format!("h({t}) = 0")
    } else {
        "h vanishes only at 0".into()
    };
    push(Clause::CouplingZeroOnlyAtZero, zero_ok, detail);

    let first_violation = checks.iter().find(|c| !c.passed).map(|c| c.clause);
    AdmissibilityReport {
        passed: first_violation.is_none(),
        first_violation,
        checks,
        sup_abs_source_primitive: sup_abs_f,
        sup_local_primitive: sup_g,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn catalog() -> Vec<ScalarFn> {
        vec![
            ScalarFn::cosine(1.0, 1.0),
            ScalarFn::cosine(0.7, 2.5),
            ScalarFn::new(Kind::Lorentzian, vec![1.0, 1.0]).unwrap(),
            ScalarFn::new(Kind::Lorentzian, vec![-0.5, 2.0]).unwrap(),
            ScalarFn::rational_h(2.0).unwrap(),
            ScalarFn::affine(1.0, 1.0),
            ScalarFn::new(Kind::PowerK, vec![0.5, 2.0, 1.5]).unwrap(),
            ScalarFn::identity(1.0),
            ScalarFn::new(Kind::ExpBased, vec![1.0]).unwrap(),
        ]
    }

    #[test]
    fn kirchhoff_primitive_affine() {
        let k = ScalarFn::affine(1.0, 1.0);
        assert_abs_diff_eq!(k.primitive(2.0).unwrap(), 4.0, epsilon = 1e-15);
    }

    #[test]
    fn cosine_primitive_is_sine() {
        let f = ScalarFn::cosine(1.0, 1.0);
        assert_abs_diff_eq!(f.primitive(std::f64::consts::FRAC_PI_2).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn rational_coupling_primitive_matches_quadrature() {
        let h = ScalarFn::rational_h(2.0).unwrap();
        let expected = 0.5 * (4.0f64 / 3.0).ln();
        assert_abs_diff_eq!(expected, 0.143_841_036_225_890_1, epsilon = 1e-15);
        assert_abs_diff_eq!(h.primitive(1.0).unwrap(), expected, epsilon = 1e-14);
        assert_abs_diff_eq!(h.quadrature_primitive(1.0).unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn primitive_outside_domain_is_an_error() {
        let h = ScalarFn::rational_h(2.0).unwrap();
        assert!(matches!(h.primitive(2.0), Err(Error::Domain { .. })));
        let b = NonlinearityBundle::sine_benchmark();
        assert!(b.eval_primitive(Slot::Coupling, -2.5).is_err());
        assert!(b.eval_primitive(Slot::Kirchhoff, 3.0).is_ok());
    }

    #[test]
    fn closed_forms_agree_with_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for f in catalog() {
            let d = f.domain();
            for _ in 0..100 {
                let x = if d.hi.is_finite() {
                    rng.random_range(d.lo * 0.999..d.hi * 0.999)
                } else if d.closed_lo {
                    rng.random_range(0.0..20.0)
                } else {
                    rng.random_range(-20.0..20.0)
                };
                let closed = f.closed_primitive(x).unwrap();
                let quad = f.quadrature_primitive(x).unwrap();
                assert!(
                    (closed - quad).abs() <= 1e-10 * (1.0 + closed.abs()),
                    "{:?} at {x}: {closed} vs {quad}",
                    f.kind()
                );
            }
        }
    }

    #[test]
    fn derivatives_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut fns = catalog();
        fns.push(ScalarFn::new(Kind::Bump, vec![1.0, 1.5]).unwrap());
        for f in fns {
            for _ in 0..50 {
                let x =
                    if f.domain().hi.is_finite() { rng.random_range(-1.5..1.5) } else { rng.random_range(0.1..4.0) };
                let h = 1e-6;
                let fd = (f.eval(x + h) - f.eval(x - h)) / (2.0 * h);
                let d = f.derivative(x).unwrap();
                assert!((fd - d).abs() < 1e-6 * (1.0 + d.abs()), "{:?} at {x}", f.kind());
            }
        }
    }

    #[test]
    fn bounds_from_metadata() {
        let b = bounds_of_primitive(&ScalarFn::cosine(1.0, 1.0), &ScanConfig::default()).unwrap();
        assert_eq!((b.alpha, b.beta, b.omega, b.exact), (-1.0, 1.0, 2.0, true));
        let l = ScalarFn::new(Kind::Lorentzian, vec![1.0, 1.0]).unwrap();
        let b = bounds_of_primitive(&l, &ScanConfig::default()).unwrap();
        let pi = std::f64::consts::PI;
        assert_abs_diff_eq!(b.alpha, -pi / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(b.beta, pi / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(b.omega, pi, epsilon = 1e-15);
    }

    #[test]
    fn zero_source_is_degenerate() {
        let r = bounds_of_primitive(&ScalarFn::zero(), &ScanConfig::default());
        assert!(matches!(r, Err(Error::Degenerate)));
        let table = ScalarFn::new(Kind::CustomTable, vec![-1.0, 0.0, 1.0, 0.0]).unwrap();
        let scan = ScanConfig { half_points: 200, ..Default::default() };
        assert!(matches!(bounds_of_primitive(&table, &scan), Err(Error::Degenerate)));
    }

    #[test]
    fn scan_matches_bump_integral() {
        let bump = ScalarFn::new(Kind::Bump, vec![1.0, 1.0]).unwrap();
        let b = bounds_of_primitive(&bump, &ScanConfig::default()).unwrap();
        let half = bump.integral(0.0, 1.0).unwrap();
        assert!(!b.exact);
        assert_abs_diff_eq!(b.beta, half, epsilon = 1e-11);
        assert_abs_diff_eq!(b.alpha, -half, epsilon = 1e-11);
    }

    #[test]
    fn scan_refines_interior_extremum() {
        // f = 1 up to x = 1, then ramps to -1 at 1.1: F peaks at 1.05 with
        // value 1.025, strictly between the scan points 1.0 and 1.2
        let table = ScalarFn::new(Kind::CustomTable, vec![1.0, 1.0, 1.1, -1.0]).unwrap();
        let scan = ScanConfig { radius: 10.0, half_points: 50, cap: 1e9 };
        let b = bounds_of_primitive(&table, &scan).unwrap();
        assert_abs_diff_eq!(b.beta, 1.025, epsilon = 1e-10);
        assert_abs_diff_eq!(b.alpha, -10.0, epsilon = 1e-10);
    }

    #[test]
    fn unbounded_primitive_is_reported() {
        let f = ScalarFn::affine(0.0, 1.0);
        let scan = ScanConfig { radius: 1e3, half_points: 100, cap: 1e4 };
        assert!(matches!(bounds_of_primitive(&f, &scan), Err(Error::Unbounded { .. })));
    }

    #[test]
    fn radial_inverse_examples() {
        assert_eq!(radial_inverse(&ScalarFn::affine(1.0, 0.0), 7.0).unwrap(), 7.0);
        assert_abs_diff_eq!(radial_inverse(&ScalarFn::affine(1.0, 1.0), 10.0).unwrap(), 2.0, epsilon = 1e-14);
        assert_eq!(radial_inverse(&ScalarFn::affine(1.0, 1.0), 0.0).unwrap(), 0.0);
        assert!(matches!(radial_inverse(&ScalarFn::affine(-1.0, 0.0), 1.0), Err(Error::Bracket { .. })));
        assert!(radial_inverse(&ScalarFn::affine(1.0, 0.0), -1.0).is_err());
    }

    #[test]
    fn radial_inverse_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ks = [
            ScalarFn::affine(1.0, 0.0),
            ScalarFn::affine(1.0, 1.0),
            ScalarFn::affine(0.2, 3.0),
            ScalarFn::new(Kind::PowerK, vec![0.5, 2.0, 1.5]).unwrap(),
            ScalarFn::new(Kind::PowerK, vec![0.0, 1.0, 0.5]).unwrap(),
        ];
        for k in &ks {
            for _ in 0..100 {
                let t: f64 = rng.random_range(0.0..50.0);
                let s = t * k.eval(t * t);
                let back = radial_inverse(k, s).unwrap();
                assert!((back - t).abs() <= 1e-10 * (1.0 + t), "{:?}: {t} -> {back}", k.kind());
                assert!((back * k.eval(back * back) - s).abs() <= 1e-12 * (1.0 + s));
            }
        }
    }

    #[test]
    fn kirchhoff_primitive_strictly_increasing() {
        for k in [ScalarFn::affine(1.0, 1.0), ScalarFn::new(Kind::PowerK, vec![0.5, 2.0, 1.5]).unwrap()] {
            let vals: Vec<f64> = (0..1000).map(|i| k.primitive(i as f64 * 0.05).unwrap()).collect();
            assert!(vals.windows(2).all(|w| w[1] > w[0]));
        }
    }

    #[test]
    fn coupling_primitive_positive_off_zero() {
        let b = NonlinearityBundle::sine_benchmark();
        for h in [
            ScalarFn::rational_h(2.0).unwrap(),
            ScalarFn::identity(1.0),
            ScalarFn::new(Kind::ExpBased, vec![1.0]).unwrap(),
        ] {
            assert_eq!(h.primitive(0.0).unwrap(), 0.0);
            for i in 1..2000 {
                let t = -2.0 + 4.0 * i as f64 / 2000.0;
                if t == 0.0 {
                    continue;
                }
                let v = h.primitive(t).unwrap();
                assert!(v > 0.0, "{:?} H({t}) = {v}", h.kind());
            }
            // midpoint convexity
            for i in 1..199 {
                let (a, c) = (-1.9 + i as f64 * 0.019, -1.9 + (i + 1) as f64 * 0.019);
                let mid = h.primitive(0.5 * (a + c)).unwrap();
                assert!(mid <= 0.5 * (h.primitive(a).unwrap() + h.primitive(c).unwrap()) + 1e-15);
            }
        }
        assert_eq!(b.h_domain(), Interval::open(-2.0, 2.0));
    }

    #[test]
    fn admissibility_examples() {
        let cfg = AdmissibilityConfig::default();
        let good = NonlinearityBundle::new(
            ScalarFn::cosine(1.0, 1.0),
            ScalarFn::zero(),
            ScalarFn::affine(1.0, 1.0),
            ScalarFn::identity(1.0),
        )
        .unwrap();
        let r = check_admissibility(&good, &cfg);
        assert!(r.passed, "{r:?}");
        assert_abs_diff_eq!(r.sup_abs_source_primitive, 1.0, epsilon = 1e-6);

        let bad_k = NonlinearityBundle { kirchhoff: ScalarFn::affine(-1.0, 0.0), ..good.clone() };
        let r = check_admissibility(&bad_k, &cfg);
        assert_eq!(r.first_violation, Some(Clause::KirchhoffPositive));
        assert_eq!(r.first_violation.unwrap().label(), "k(t)>0");

        let shifted_h = NonlinearityBundle { coupling: ScalarFn::affine(-1.0, 1.0), ..good.clone() };
        let r = check_admissibility(&shifted_h, &cfg);
        assert_eq!(r.first_violation, Some(Clause::CouplingZeroOnlyAtZero));
        assert_eq!(r.first_violation.unwrap().label(), "h⁻¹(0)={0}");

        let narrow_h = NonlinearityBundle { coupling: ScalarFn::rational_h(1.0).unwrap(), ..good.clone() };
        assert_eq!(check_admissibility(&narrow_h, &cfg).first_violation, Some(Clause::CouplingDefined));

        let decreasing_k = NonlinearityBundle { kirchhoff: ScalarFn::affine(10.0, -0.01), ..good };
        assert_eq!(check_admissibility(&decreasing_k, &cfg).first_violation, Some(Clause::KirchhoffNondecreasing));
    }

    #[test]
    fn benchmark_bundle_is_admissible() {
        let b = NonlinearityBundle::sine_benchmark();
        assert!(check_admissibility(&b, &AdmissibilityConfig::default()).passed);
        assert_eq!((b.alpha(), b.beta(), b.omega()), (-1.0, 1.0, 2.0));
        for slot in [Slot::Source, Slot::Local, Slot::Kirchhoff, Slot::Coupling] {
            assert_eq!(b.eval_primitive(slot, 0.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn spec_round_trip_resolves_auto_coupling() {
        let json = r#"{"f":{"kind":"cosine","params":[1,1]},"k":{"kind":"affine-k","params":[1,1]},"h":{"kind":"rational-h"}}"#;
        let spec: BundleSpec = serde_json::from_str(json).unwrap();
        let b = NonlinearityBundle::from_spec(&spec, &ScanConfig::default()).unwrap();
        assert_eq!(b, NonlinearityBundle::sine_benchmark());
    }

    #[test]
    fn known_bounds_and_monotonicity_hold_on_samples() {
        let mut fns = catalog();
        fns.push(ScalarFn::new(Kind::Bump, vec![1.0, 1.5]).unwrap());
        fns.push(ScalarFn::new(Kind::CustomTable, vec![-1.0, -2.0, 0.0, 0.0, 2.0, 1.0]).unwrap());
        for f in fns {
            let d = f.domain();
            let (lo, hi) = if d.hi.is_finite() {
                (d.lo * 0.999, d.hi * 0.999)
            } else if d.closed_lo {
                (0.0, 30.0)
            } else {
                (-30.0, 30.0)
            };
            let xs: Vec<f64> = (0..=3000).map(|i| lo + (hi - lo) * i as f64 / 3000.0).collect();
            let ys: Vec<f64> = xs.iter().map(|&x| f.eval(x)).collect();
            assert!(ys.iter().all(|y| y.is_finite()));
            if f.monotone_nondecreasing() {
                assert!(ys.windows(2).all(|w| w[1] >= w[0]), "{:?}", f.kind());
            }
            if let Some((a, b)) = f.known_bounds() {
                assert!(ys.iter().all(|&y| y >= a && y <= b), "{:?}", f.kind());
            }
        }
    }
}
