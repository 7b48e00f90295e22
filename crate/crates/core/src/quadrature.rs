//! Gauss–Legendre rules and an adaptive bisection integrator built on them.

use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Default absolute tolerance for primitives computed by quadrature.
pub const PRIMITIVE_TOL: f64 = 1e-12;
/// Points per panel of the adaptive integrator.
pub const PANEL_POINTS: usize = 15;
/// Maximum bisection depth of the adaptive integrator.
pub const MAX_DEPTH: usize = 40;

/// An `n`-point Gauss–Legendre rule mapped to the reference interval [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct GaussLegendre {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "a quadrature rule needs at least one point");
        let mut points = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        // roots are symmetric, so only the upper half is solved for
        for i in 0..n.div_ceil(2) {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            // map [-1, 1] -> [0, 1]
            points[i] = 0.5 * (1.0 - x);
            points[n - 1 - i] = 0.5 * (1.0 + x);
            weights[i] = 0.5 * w;
            weights[n - 1 - i] = 0.5 * w;
        }
        Self { points, weights }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Integral of `f` over [a, b] with this fixed rule.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F, a: f64, b: f64) -> f64 {
        let w = b - a;
        let mut acc = 0.0;
        for (p, q) in self.points.iter().zip(&self.weights) {
            acc += q * f(a + w * p);
        }
        acc * w
    }
}

/// Value and derivative of the Legendre polynomial P_n at x.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

fn panel_rule() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(PANEL_POINTS))
}

/// Adaptive Gauss–Legendre integration of `f` over [a, b].
///
/// Each panel is compared against the sum of its two halves; a panel is
/// accepted when they agree within its share of `tol` (or to a few ulps of
/// the panel value, whichever is larger).
pub fn adaptive<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
    let rule = panel_rule();
    let whole = rule.integrate(f, lo, hi);
    let total = hi - lo;
    let v = panel(f, rule, lo, hi, whole, tol, total, 0)?;
    Ok(sign * v)
}

#[allow(clippy::too_many_arguments)]
fn panel<F: Fn(f64) -> f64>(
    f: &F,
    rule: &GaussLegendre,
    a: f64,
    b: f64,
    whole: f64,
    tol: f64,
    total: f64,
    depth: usize,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let left = rule.integrate(f, a, m);
    let right = rule.integrate(f, m, b);
    let refined = left + right;
    let share = tol * (b - a) / total;
    let floor = 8.0 * f64::EPSILON * refined.abs();
    if (refined - whole).abs() <= share.max(floor) {
        return Ok(refined);
    }
    if !refined.is_finite() {
        return Err(Error::Quadrature { a, b, depth });
    }
    if depth >= MAX_DEPTH || m <= a || m >= b {
        return Err(Error::Quadrature { a, b, depth });
    }
    let l = panel(f, rule, a, m, left, tol, total, depth + 1)?;
    let r = panel(f, rule, m, b, right, tol, total, depth + 1)?;
    Ok(l + r)
}

/// Adaptive integration split at the given interior breakpoints (kinks of
/// piecewise integrands).
pub fn adaptive_split<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, breaks: &[f64], tol: f64) -> Result<f64> {
    if breaks.is_empty() || a == b {
        return adaptive(f, a, b, tol);
    }
    let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
    let mut cuts: Vec<f64> = breaks.iter().copied().filter(|&x| x > lo && x < hi).collect();
    cuts.sort_by(f64::total_cmp);
    let mut prev = lo;
    let mut acc = 0.0;
    let n = cuts.len() + 1;
    for c in cuts.into_iter().chain(std::iter::once(hi)) {
        acc += adaptive(f, prev, c, tol / n as f64)?;
        prev = c;
    }
    Ok(sign * acc)
}
