//! Piecewise-linear finite elements on a uniform grid of (0, 1) with
//! homogeneous Dirichlet conditions.
//!
//! A [`Field`] stores the nodal values at the `N` interior nodes; the
//! boundary values are implicitly zero. Nonlinear integrals are evaluated by
//! Gauss quadrature of the composite with the linear interpolant, so the
//! discrete functionals are exact functions of the coefficients and their
//! gradients are the corresponding load vectors.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nonlinearity::{Interval, ScalarFn};
use crate::quadrature::GaussLegendre;

/// Uniform grid with `n` interior nodes `x_i = i / (n + 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Grid1D {
    n: usize,
}

impl Grid1D {
    pub fn new(n_interior: usize) -> Result<Self> {
        if n_interior == 0 {
            return Err(Error::InvalidParameter("grid needs at least one interior node".into()));
        }
        Ok(Self { n: n_interior })
    }

    pub fn n_interior(&self) -> usize {
        self.n
    }

    pub fn n_elements(&self) -> usize {
        self.n + 1
    }

    pub fn delta(&self) -> f64 {
        1.0 / (self.n + 1) as f64
    }

    /// Position of interior node `i` (1-based).
    pub fn node(&self, i: usize) -> f64 {
        i as f64 / (self.n + 1) as f64
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (1..=self.n).map(|i| self.node(i))
    }
}

/// Per-element Gauss rule on the reference element [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn gauss(points_per_element: usize) -> Self {
        let gl = GaussLegendre::new(points_per_element);
        Self { points: gl.points, weights: gl.weights }
    }

    pub fn points_per_element(&self) -> usize {
        self.points.len()
    }
}

impl Default for QuadratureRule {
    fn default() -> Self {
        Self::gauss(5)
    }
}

/// Discrete element of H¹₀(0,1): nodal values on the interior nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid1D,
    coeffs: Vec<f64>,
}

impl Field {
    pub fn new(grid: Grid1D, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != grid.n_interior() {
            return Err(Error::InvalidParameter(format!(
                "field has {} coefficients for {} interior nodes",
                coeffs.len(),
                grid.n_interior()
            )));
        }
        Ok(Self { grid, coeffs })
    }

    pub fn zeros(grid: Grid1D) -> Self {
        Self { grid, coeffs: vec![0.0; grid.n_interior()] }
    }

    /// Nodal unit vector at interior node `i` (0-based coefficient index).
    pub fn unit(grid: Grid1D, i: usize) -> Self {
        let mut f = Self::zeros(grid);
        f.coeffs[i] = 1.0;
        f
    }

    pub fn grid(&self) -> Grid1D {
        self.grid
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Value at global node `j` in `0..=n+1`, including the zero boundary.
    #[inline]
    fn at(&self, j: usize) -> f64 {
        if j == 0 || j > self.coeffs.len() {
            0.0
        } else {
            self.coeffs[j - 1]
        }
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0.0)
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self { grid: self.grid, coeffs: self.coeffs.iter().map(|c| a * c).collect() }
    }

    /// `self + a * other`
    pub fn axpy(&self, a: f64, other: &Field) -> Self {
        debug_assert_eq!(self.grid, other.grid);
        let coeffs = self.coeffs.iter().zip(&other.coeffs).map(|(x, y)| x + a * y).collect();
        Self { grid: self.grid, coeffs }
    }

    pub fn sub(&self, other: &Field) -> Self {
        self.axpy(-1.0, other)
    }

    /// Euclidean product of coefficient vectors.
    pub fn dot(&self, other: &[f64]) -> f64 {
        self.coeffs.iter().zip(other).map(|(a, b)| a * b).sum()
    }

    pub fn max_abs(&self) -> f64 {
        max_abs(&self.coeffs)
    }

    /// `∫₀¹ |u'|²`, exact for the piecewise-linear interpolant.
    pub fn norm_sq(&self) -> f64 {
        let n = self.coeffs.len();
        let mut acc = 0.0;
        for e in 0..=n {
            let d = self.at(e + 1) - self.at(e);
            acc += d * d;
        }
        acc / self.grid.delta()
    }

    /// The H¹₀ norm `(∫|u'|²)^{1/2}`.
    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn h1_distance(&self, other: &Field) -> f64 {
        self.sub(other).norm()
    }

    /// H¹₀ inner product `∫ u' v'`.
    pub fn h1_dot(&self, other: &Field) -> f64 {
        let n = self.coeffs.len();
        let mut acc = 0.0;
        for e in 0..=n {
            acc += (self.at(e + 1) - self.at(e)) * (other.at(e + 1) - other.at(e));
        }
        acc / self.grid.delta()
    }

    /// `S u`, with `S` the tridiagonal stiffness matrix `(1/Δ) tridiag(-1, 2, -1)`.
    pub fn stiffness_action(&self) -> Vec<f64> {
        let inv = 1.0 / self.grid.delta();
        (1..=self.coeffs.len()).map(|j| (2.0 * self.at(j) - self.at(j - 1) - self.at(j + 1)) * inv).collect()
    }

    /// Writes `node,value` rows (node is the 1-based interior index).
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["node", "value"])?;
        for (i, c) in self.coeffs.iter().enumerate() {
            wr.write_record([(i + 1).to_string(), c.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let mut coeffs = Vec::new();
        for (row, rec) in rd.deserialize::<(usize, f64)>().enumerate() {
            let (node, value) = rec?;
            if node != row + 1 {
                return Err(Error::InvalidParameter(format!("expected node {}, found {node}", row + 1)));
            }
            coeffs.push(value);
        }
        Field::new(Grid1D::new(coeffs.len())?, coeffs)
    }

    /// JSON array of nodal values.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.coeffs)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let coeffs: Vec<f64> = serde_json::from_str(s)?;
        Field::new(Grid1D::new(coeffs.len())?, coeffs)
    }
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Solves `S x = r` for the stiffness matrix (Thomas algorithm), i.e. the
/// Riesz representative in H¹₀ of the functional with coefficients `r`.
pub fn solve_stiffness(grid: Grid1D, r: &[f64]) -> Vec<f64> {
    let n = r.len();
    let d = grid.delta();
    // (1/Δ)(2 x_i - x_{i-1} - x_{i+1}) = r_i  <=>  2 x_i - x_{i-1} - x_{i+1} = Δ r_i
    let mut c = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut denom = 2.0;
    c[0] = -1.0 / denom;
    y[0] = d * r[0] / denom;
    for i in 1..n {
        denom = 2.0 + c[i - 1];
        c[i] = -1.0 / denom;
        y[i] = (d * r[i] + y[i - 1]) / denom;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = y[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = y[i] - c[i] * x[i + 1];
    }
    x
}

/// A real map composed with fields inside integrals.
pub trait ScalarMap {
    fn apply(&self, x: f64) -> Result<f64>;

    fn domain(&self) -> Interval {
        Interval::real()
    }
}

impl<F: Fn(f64) -> f64> ScalarMap for F {
    fn apply(&self, x: f64) -> Result<f64> {
        Ok(self(x))
    }
}

/// Values of a catalog function.
pub struct Values<'a>(pub &'a ScalarFn);
/// Primitive (`∫_0^x`) of a catalog function.
pub struct Primitive<'a>(pub &'a ScalarFn);
/// Derivative of a (C1) catalog function.
pub struct Derivative<'a>(pub &'a ScalarFn);

impl ScalarMap for Values<'_> {
    fn apply(&self, x: f64) -> Result<f64> {
        Ok(self.0.eval(x))
    }

    fn domain(&self) -> Interval {
        self.0.domain()
    }
}

impl ScalarMap for Primitive<'_> {
    fn apply(&self, x: f64) -> Result<f64> {
        self.0.primitive(x)
    }

    fn domain(&self) -> Interval {
        self.0.domain()
    }
}

impl ScalarMap for Derivative<'_> {
    fn apply(&self, x: f64) -> Result<f64> {
        self.0.derivative(x).ok_or(Error::Smoothness { which: "derivative of a C0 function" })
    }

    fn domain(&self) -> Interval {
        self.0.domain()
    }
}

/// The P1 model: a grid together with its element quadrature rule.
#[derive(Debug, Clone, PartialEq)]
pub struct Discretization {
    pub grid: Grid1D,
    pub rule: QuadratureRule,
}

impl Discretization {
    pub fn new(grid: Grid1D) -> Self {
        Self { grid, rule: QuadratureRule::default() }
    }

    pub fn with_rule(grid: Grid1D, rule: QuadratureRule) -> Self {
        Self { grid, rule }
    }

    pub fn zeros(&self) -> Field {
        Field::zeros(self.grid)
    }

    /// `phi` evaluated at every quadrature point of the interpolant of `u`,
    /// element-major.
    pub fn quad_values<P: ScalarMap + ?Sized>(&self, phi: &P, u: &Field) -> Result<Vec<f64>> {
        let q = self.rule.points.len();
        let n_el = self.grid.n_elements();
        let domain = phi.domain();
        let mut out = Vec::with_capacity(n_el * q);
        for e in 0..n_el {
            let (a, b) = (u.at(e), u.at(e + 1));
            for &xi in &self.rule.points {
                let s = a + (b - a) * xi;
                if !domain.contains(s) {
                    return Err(Error::Domain { value: s, domain: domain.to_string() });
                }
                out.push(phi.apply(s)?);
            }
        }
        Ok(out)
    }

    /// `∫₀¹ phi(u(x)) dx`.
    pub fn integrate_composed<P: ScalarMap + ?Sized>(&self, phi: &P, u: &Field) -> Result<f64> {
        let vals = self.quad_values(phi, u)?;
        Ok(self.integrate_values(&vals))
    }

    /// Integral from precomputed quadrature-point values.
    pub fn integrate_values(&self, vals: &[f64]) -> f64 {
        let q = self.rule.points.len();
        let mut acc = 0.0;
        for el in vals.chunks_exact(q) {
            let mut s = 0.0;
            for (v, w) in el.iter().zip(&self.rule.weights) {
                s += v * w;
            }
            acc += s;
        }
        acc * self.grid.delta()
    }

    /// `b_i = ∫ phi(u) φ_i` against the hat functions; the gradient of
    /// `u ↦ ∫Φ(u)` with respect to the coefficients when `Φ' = phi`.
    pub fn load_vector<P: ScalarMap + ?Sized>(&self, phi: &P, u: &Field) -> Result<Vec<f64>> {
        let vals = self.quad_values(phi, u)?;
        Ok(self.load_from_values(&vals, None))
    }

    /// Load vector from precomputed quadrature-point values, optionally
    /// multiplied pointwise by the interpolant of `v`.
    pub fn load_from_values(&self, vals: &[f64], v: Option<&Field>) -> Vec<f64> {
        let q = self.rule.points.len();
        let n = self.grid.n_interior();
        let d = self.grid.delta();
        let mut b = vec![0.0; n];
        for (e, el) in vals.chunks_exact(q).enumerate() {
            let (va, vb) = v.map_or((1.0, 1.0), |v| (v.at(e), v.at(e + 1)));
            let mut left = 0.0; // against the hat of node e (decreasing on this element)
            let mut right = 0.0; // against the hat of node e + 1 (increasing)
            for ((val, &w), &xi) in el.iter().zip(&self.rule.weights).zip(&self.rule.points) {
                let scale = if v.is_some() { va + (vb - va) * xi } else { 1.0 };
                let t = w * val * scale;
                left += t * (1.0 - xi);
                right += t * xi;
            }
            if e >= 1 {
                b[e - 1] += left * d;
            }
            if e < n {
                b[e] += right * d;
            }
        }
        b
    }

    /// `(M v)_i = ∫ w(u) v φ_i`, the action of the weighted mass matrix.
    pub fn weighted_action<P: ScalarMap + ?Sized>(&self, weight: &P, u: &Field, v: &Field) -> Result<Vec<f64>> {
        let vals = self.quad_values(weight, u)?;
        Ok(self.load_from_values(&vals, Some(v)))
    }

    /// Nodal interpolant of `expr` (boundary values are ignored).
    pub fn interpolate<E: Fn(f64) -> f64>(&self, expr: E) -> Result<Field> {
        let coeffs: Vec<f64> = self.grid.nodes().map(expr).collect();
        if let Some((i, &v)) = coeffs.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { node: i + 1, value: v });
        }
        Field::new(self.grid, coeffs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(grid: Grid1D, rng: &mut ChaCha8Rng, scale: f64) -> Field {
        let c = (0..grid.n_interior()).map(|_| rng.random_range(-scale..scale)).collect();
        Field::new(grid, c).unwrap()
    }

    #[test]
    fn grid_nodes_are_exact() {
        let g = Grid1D::new(3).unwrap();
        assert_eq!(g.delta(), 0.25);
        assert_eq!(g.nodes().collect::<Vec<_>>(), vec![0.25, 0.5, 0.75]);
        assert!(Grid1D::new(0).is_err());
    }

    #[test]
    fn norm_sq_examples() {
        let g = Grid1D::new(3).unwrap();
        assert_eq!(Field::zeros(g).norm_sq(), 0.0);
        // hat at one node: slopes ±1/Δ on two elements, 2/Δ = 8
        assert_eq!(Field::unit(g, 1).norm_sq(), 8.0);
    }

    #[test]
    fn norm_sq_matches_quadrature_of_derivative() {
        let g = Grid1D::new(9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rule = QuadratureRule::default();
        for _ in 0..20 {
            let u = random_field(g, &mut rng, 3.0);
            // oracle: 5-point rule on each element of |u'|^2, u' constant
            let mut acc = 0.0;
            for e in 0..g.n_elements() {
                let slope = (u.at(e + 1) - u.at(e)) / g.delta();
                acc += g.delta() * rule.weights.iter().map(|w| w * slope * slope).sum::<f64>();
            }
            assert!((u.norm_sq() - acc).abs() <= 1e-12 * (1.0 + acc));
            let su = u.stiffness_action();
            assert!((u.dot(&su) - u.norm_sq()).abs() <= 1e-12 * (1.0 + acc));
        }
    }

    #[test]
    fn integrate_composed_examples() {
        let g = Grid1D::new(3).unwrap();
        let disc = Discretization::new(g);
        let sin = ScalarFn::cosine(1.0, 1.0);
        assert_eq!(disc.integrate_composed(&Primitive(&sin), &Field::zeros(g)).unwrap(), 0.0);
        let hat = Field::unit(g, 1);
        assert_abs_diff_eq!(disc.integrate_composed(&|x: f64| x, &hat).unwrap(), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn integrate_composed_matches_dense_riemann_sum() {
        let g = Grid1D::new(3).unwrap();
        let disc = Discretization::new(g);
        let hat = Field::unit(g, 1);
        let v = disc.integrate_composed(&|x: f64| x.sin(), &hat).unwrap();
        // midpoint sum with 10^6 cells of sin(hat(x))
        let m = 1_000_000;
        let mut acc = 0.0;
        for i in 0..m {
            let x = (i as f64 + 0.5) / m as f64;
            let y = if (0.25..=0.5).contains(&x) {
                (x - 0.25) / 0.25
            } else if (0.5..0.75).contains(&x) {
                (0.75 - x) / 0.25
            } else {
                0.0
            };
            acc += y.sin();
        }
        acc /= m as f64;
        assert!((v - acc).abs() < 1e-10, "{v} vs {acc}");
    }

    #[test]
    fn integrate_composed_rejects_out_of_domain() {
        let g = Grid1D::new(3).unwrap();
        let disc = Discretization::new(g);
        let h = ScalarFn::rational_h(0.5).unwrap();
        let u = Field::unit(g, 1);
        assert!(matches!(disc.integrate_composed(&Values(&h), &u), Err(Error::Domain { .. })));
    }

    #[test]
    fn load_vector_examples() {
        let g = Grid1D::new(3).unwrap();
        let disc = Discretization::new(g);
        let cos = ScalarFn::cosine(1.0, 1.0);
        let b = disc.load_vector(&Values(&cos), &Field::zeros(g)).unwrap();
        for v in b {
            assert_abs_diff_eq!(v, 0.25, epsilon = 1e-15);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u = random_field(g, &mut rng, 1.0);
        assert_eq!(disc.load_vector(&|_x: f64| 0.0, &u).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn load_vector_is_gradient_of_integral() {
        let g = Grid1D::new(15).unwrap();
        let disc = Discretization::new(g);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = ScalarFn::cosine(1.0, 1.3);
        for _ in 0..10 {
            let u = random_field(g, &mut rng, 2.0);
            let v = random_field(g, &mut rng, 1.0);
            let b = disc.load_vector(&Values(&f), &u).unwrap();
            let bv = v.dot(&b);
            let mut errs = Vec::new();
            for h in [1e-2, 5e-3] {
                let p = disc.integrate_composed(&Primitive(&f), &u.axpy(h, &v)).unwrap();
                let m = disc.integrate_composed(&Primitive(&f), &u.axpy(-h, &v)).unwrap();
                errs.push(((p - m) / (2.0 * h) - bv).abs());
            }
            // central differences: halving the step quarters the error
            let ratio = errs[0] / errs[1];
            assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn weighted_action_matches_load_derivative() {
        let g = Grid1D::new(7).unwrap();
        let disc = Discretization::new(g);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = ScalarFn::cosine(1.0, 1.0);
        let u = random_field(g, &mut rng, 1.0);
        let v = random_field(g, &mut rng, 1.0);
        let mv = disc.weighted_action(&Derivative(&f), &u, &v).unwrap();
        let h = 1e-6;
        let bp = disc.load_vector(&Values(&f), &u.axpy(h, &v)).unwrap();
        let bm = disc.load_vector(&Values(&f), &u.axpy(-h, &v)).unwrap();
        for i in 0..7 {
            assert!(((bp[i] - bm[i]) / (2.0 * h) - mv[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn interpolate_examples() {
        let g = Grid1D::new(3).unwrap();
        let disc = Discretization::new(g);
        let u = disc.interpolate(|x| x * (1.0 - x)).unwrap();
        assert_eq!(u.coeffs(), &[0.1875, 0.25, 0.1875]);
        assert!(disc.interpolate(|_| 0.0).unwrap().is_zero());
        assert!(matches!(disc.interpolate(|x| 1.0 / (x - 0.5)), Err(Error::NonFinite { node: 2, .. })));
        let g9 = Discretization::new(Grid1D::new(9).unwrap());
        let s = g9.interpolate(|x| (std::f64::consts::PI * x).sin()).unwrap();
        let exact = std::f64::consts::PI.powi(2) / 2.0;
        assert!((s.norm_sq() - exact).abs() / exact < 0.02);
    }

    #[test]
    fn refinement_ratio_is_four() {
        // error of ∫ sin(u_h) against the continuum value ∫ sin(sin(πx))
        let expr = |x: f64| (std::f64::consts::PI * x).sin();
        let sin = ScalarFn::cosine(1.0, 1.0);
        let fine = Discretization::new(Grid1D::new(4095).unwrap());
        let reference = fine.integrate_composed(&Primitive(&sin), &fine.interpolate(expr).unwrap()).unwrap();
        let err = |n: usize| {
            let d = Discretization::new(Grid1D::new(n).unwrap());
            let v = d.integrate_composed(&Primitive(&sin), &d.interpolate(expr).unwrap()).unwrap();
            (v - reference).abs()
        };
        let ratio = err(15) / err(31);
        assert!((3.6..4.4).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn integration_is_exact_for_affine_maps() {
        let g = Grid1D::new(7).unwrap();
        let disc = Discretization::new(g);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let u = random_field(g, &mut rng, 5.0);
        // trapezoid of a piecewise-linear function is exact
        let exact: f64 = u.coeffs().iter().sum::<f64>() * g.delta();
        let v = disc.integrate_composed(&|x: f64| 3.0 * x - 2.0, &u).unwrap();
        assert!((v - (3.0 * exact - 2.0)).abs() < 1e-13);
    }

    #[test]
    fn stiffness_solve_inverts_action() {
        let g = Grid1D::new(31).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let u = random_field(g, &mut rng, 1.0);
        let back = solve_stiffness(g, &u.stiffness_action());
        for (a, b) in back.iter().zip(u.coeffs()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_and_json_round_trip() {
        let g = Grid1D::new(4).unwrap();
        let u = Field::new(g, vec![0.1, -2.5, 1e-17, 3.0]).unwrap();
        let mut buf = Vec::new();
        u.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().starts_with("node,value\n1,0.1\n"));
        assert_eq!(Field::read_csv(&buf[..]).unwrap(), u);
        assert_eq!(Field::from_json(&u.to_json().unwrap()).unwrap(), u);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn norm_is_positive_definite_and_homogeneous(
                c in proptest::collection::vec(-10.0f64..10.0, 1..20),
                a in -5.0f64..5.0,
            ) {
                let g = Grid1D::new(c.len()).unwrap();
                let u = Field::new(g, c).unwrap();
                let n = u.norm_sq();
                prop_assert!(n >= 0.0);
                prop_assert_eq!(n == 0.0, u.is_zero());
                let scaled = u.scaled(a).norm_sq();
                prop_assert!((scaled - a * a * n).abs() <= 1e-12 * (1.0 + a * a * n));
            }
        }
    }
}
