//! Discrete energy functional
//!
//! `E(u) = ½K(‖u‖²) − ∫G(u) − μ H(∫F(u) − λ)`
//!
//! together with its exact coefficient gradient (the weak residual) and the
//! action of its Hessian.

use serde::{Deserialize, Serialize};

use crate::discretization::{Derivative, Discretization, Field, Grid1D, Primitive, Values};
use crate::error::{Error, Result};
use crate::nonlinearity::{radial_inverse, NonlinearityBundle, Slot, Smoothness};

/// Relative margin keeping λ strictly inside `(alpha_f, beta_f)`.
pub const LAMBDA_MARGIN: f64 = 1e-9;

/// How Hessian actions are computed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HessianMode {
    /// Analytic when every catalog entry is at least C1, finite differences
    /// of the residual otherwise.
    #[default]
    Auto,
    Analytic,
    FiniteDifference,
}

/// One instance of the energy functional: nonlinearities, grid, `μ`, `λ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    bundle: NonlinearityBundle,
    disc: Discretization,
    mu: f64,
    lambda: f64,
    hessian: HessianMode,
}

impl ProblemSpec {
    pub fn new(bundle: NonlinearityBundle, grid: Grid1D, mu: f64, lambda: f64) -> Result<Self> {
        if !(mu >= 0.0) || !mu.is_finite() {
            return Err(Error::InvalidParameter(format!("mu must be finite and >= 0, got {mu}")));
        }
        let (lo, hi) = lambda_bounds(&bundle);
        if !(lambda >= lo && lambda <= hi) {
            return Err(Error::Domain {
                value: lambda,
                domain: format!("[{lo}, {hi}] (alpha_f, beta_f shrunk by {LAMBDA_MARGIN})"),
            });
        }
        Ok(Self { bundle, disc: Discretization::new(grid), mu, lambda, hessian: HessianMode::Auto })
    }

    pub fn with_hessian_mode(mut self, mode: HessianMode) -> Self {
        self.hessian = mode;
        self
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::new(self.bundle.clone(), self.disc.grid, self.mu, lambda).map(|s| s.with_hessian_mode(self.hessian))
    }

    pub fn with_mu(&self, mu: f64) -> Result<Self> {
        Self::new(self.bundle.clone(), self.disc.grid, mu, self.lambda).map(|s| s.with_hessian_mode(self.hessian))
    }

    pub fn bundle(&self) -> &NonlinearityBundle {
        &self.bundle
    }

    pub fn disc(&self) -> &Discretization {
        &self.disc
    }

    pub fn grid(&self) -> Grid1D {
        self.disc.grid
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn hessian_mode(&self) -> HessianMode {
        self.hessian
    }

    /// `J_f(u) = ∫F(u)`.
    pub fn source_integral(&self, u: &Field) -> Result<f64> {
        self.disc.integrate_composed(&Primitive(&self.bundle.source), u)
    }

    fn coupling_arg(&self, u: &Field) -> Result<(f64, f64)> {
        let jf = self.source_integral(u)?;
        let t = jf - self.lambda;
        if !self.bundle.h_domain().contains(t) {
            return Err(Error::Domain { value: t, domain: self.bundle.h_domain().to_string() });
        }
        Ok((jf, t))
    }
}

/// Closed range of admissible λ: `(alpha_f, beta_f)` shrunk by the margin.
pub fn lambda_bounds(bundle: &NonlinearityBundle) -> (f64, f64) {
    let m = LAMBDA_MARGIN * bundle.omega();
    (bundle.alpha() + m, bundle.beta() - m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    /// `½K(‖u‖²)`
    pub kirchhoff: f64,
    /// `∫G(u)`
    pub g_part: f64,
    /// `μH(J_f(u) − λ)`
    pub h_part: f64,
    pub total: f64,
    /// `J_f(u)`
    pub jf: f64,
}

pub fn energy(spec: &ProblemSpec, u: &Field) -> Result<EnergyBreakdown> {
    let b = &spec.bundle;
    let kirchhoff = 0.5 * b.kirchhoff.primitive(u.norm_sq())?;
    let g_part = spec.disc.integrate_composed(&Primitive(&b.local), u)?;
    let (jf, t) = spec.coupling_arg(u)?;
    let h_part = spec.mu * b.eval_primitive(Slot::Coupling, t)?;
    Ok(EnergyBreakdown { kirchhoff, g_part, h_part, total: kirchhoff - g_part - h_part, jf })
}

/// Weak residual tested against every hat function:
/// `r_i = k(‖u‖²)(Su)_i − μ h(J_f(u) − λ) ∫f(u)φ_i − ∫g(u)φ_i`.
///
/// This is the exact gradient of [`energy`] with respect to the nodal
/// coefficients.
pub fn residual(spec: &ProblemSpec, u: &Field) -> Result<Vec<f64>> {
    let b = &spec.bundle;
    let kappa = b.kirchhoff.eval(u.norm_sq());
    let (_, t) = spec.coupling_arg(u)?;
    let coupling = spec.mu * b.coupling.eval(t);
    let su = u.stiffness_action();
    let bf = spec.disc.load_vector(&Values(&b.source), u)?;
    let bg = spec.disc.load_vector(&Values(&b.local), u)?;
    Ok(su.iter().zip(&bf).zip(&bg).map(|((s, f), g)| kappa * s - coupling * f - g).collect())
}

/// Linearization of [`residual`] at a fixed `u`.
pub struct HessianOperator<'a> {
    spec: &'a ProblemSpec,
    u: &'a Field,
    inner: Linearization,
}

enum Linearization {
    Analytic {
        kappa: f64,
        dkappa: f64,
        su: Vec<f64>,
        coupling: f64,
        dcoupling: f64,
        bf: Vec<f64>,
        weight_f: Vec<f64>,
        weight_g: Vec<f64>,
    },
    FiniteDifference {
        unorm: f64,
    },
}

impl<'a> HessianOperator<'a> {
    pub fn new(spec: &'a ProblemSpec, u: &'a Field) -> Result<Self> {
        let analytic = match spec.hessian {
            HessianMode::FiniteDifference => false,
            HessianMode::Auto => spec.bundle.is_smooth(),
            HessianMode::Analytic => {
                let b = &spec.bundle;
                for (name, f) in [("f", &b.source), ("g", &b.local), ("k", &b.kirchhoff), ("h", &b.coupling)] {
                    if f.smoothness() == Smoothness::C0 {
                        return Err(Error::Smoothness { which: name });
                    }
                }
                true
            }
        };
        let inner = if analytic {
            let b = &spec.bundle;
            let ns = u.norm_sq();
            let (_, t) = spec.coupling_arg(u)?;
            let d = |f: &crate::nonlinearity::ScalarFn, x: f64, name| {
                f.derivative(x).ok_or(Error::Smoothness { which: name })
            };
            Linearization::Analytic {
                kappa: b.kirchhoff.eval(ns),
                dkappa: d(&b.kirchhoff, ns, "k")?,
                su: u.stiffness_action(),
                coupling: spec.mu * b.coupling.eval(t),
                dcoupling: spec.mu * d(&b.coupling, t, "h")?,
                bf: spec.disc.load_vector(&Values(&b.source), u)?,
                weight_f: spec.disc.quad_values(&Derivative(&b.source), u)?,
                weight_g: spec.disc.quad_values(&Derivative(&b.local), u)?,
            }
        } else {
            Linearization::FiniteDifference { unorm: u.norm() }
        };
        Ok(Self { spec, u, inner })
    }

    pub fn is_analytic(&self) -> bool {
        matches!(self.inner, Linearization::Analytic { .. })
    }

    pub fn apply(&self, v: &Field) -> Result<Vec<f64>> {
        match &self.inner {
            Linearization::Analytic { kappa, dkappa, su, coupling, dcoupling, bf, weight_f, weight_g } => {
                let sv = v.stiffness_action();
                let su_v = v.dot(su);
                let bf_v = v.dot(bf);
                let mf = self.spec.disc.load_from_values(weight_f, Some(v));
                let mg = self.spec.disc.load_from_values(weight_g, Some(v));
                Ok((0..v.len())
                    .map(|i| {
                        kappa * sv[i] + 2.0 * dkappa * su_v * su[i]
                            - dcoupling * bf_v * bf[i]
                            - coupling * mf[i]
                            - mg[i]
                    })
                    .collect())
            }
            Linearization::FiniteDifference { unorm } => {
                let vn = v.norm();
                if vn == 0.0 {
                    return Ok(vec![0.0; v.len()]);
                }
                // perturbation of H¹₀ size 1e-6 (1 + ‖u‖)
                let eps = 1e-6 * (1.0 + unorm) / vn;
                let rp = residual(self.spec, &self.u.axpy(eps, v))?;
                let rm = residual(self.spec, &self.u.axpy(-eps, v))?;
                Ok(rp.iter().zip(&rm).map(|(p, m)| (p - m) / (2.0 * eps)).collect())
            }
        }
    }

    /// Dense Jacobian of the residual, column `j` being the action on the
    /// `j`-th nodal unit vector.
    pub fn assemble(&self) -> Result<nalgebra::DMatrix<f64>> {
        let n = self.u.len();
        let grid = self.u.grid();
        let mut m = nalgebra::DMatrix::zeros(n, n);
        for j in 0..n {
            let col = self.apply(&Field::unit(grid, j))?;
            for (i, c) in col.into_iter().enumerate() {
                m[(i, j)] = c;
            }
        }
        Ok(m)
    }
}

/// Derivative of the residual at `u` applied to `v`.
pub fn hessian_action(spec: &ProblemSpec, u: &Field, v: &Field) -> Result<Vec<f64>> {
    HessianOperator::new(spec, u)?.apply(v)
}

/// Maps the Kirchhoff gradient `v = k(‖u‖²)u` back through
/// `v ↦ s(‖v‖)/‖v‖ · v`, with `s` the inverse of `t ↦ t k(t²)`, and returns
/// the H¹₀ distance to `u`.
pub fn gradient_inverse_check(bundle: &NonlinearityBundle, u: &Field) -> Result<f64> {
    if u.is_zero() {
        return Ok(0.0);
    }
    let ns = u.norm_sq();
    let v = u.scaled(bundle.kirchhoff.eval(ns));
    let vn = v.norm();
    let tv = v.scaled(radial_inverse(&bundle.kirchhoff, vn)? / vn);
    Ok(tv.h1_distance(u))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nonlinearity::{Kind, ScalarFn};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(grid: Grid1D, rng: &mut ChaCha8Rng, radius: f64) -> Field {
        let c: Vec<f64> = (0..grid.n_interior()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = Field::new(grid, c).unwrap();
        let n = f.norm();
        f.scaled(radius / n)
    }

    fn benchmark(n: usize, mu: f64, lambda: f64) -> ProblemSpec {
        ProblemSpec::new(NonlinearityBundle::sine_benchmark(), Grid1D::new(n).unwrap(), mu, lambda).unwrap()
    }

    fn quadratic(n: usize) -> ProblemSpec {
        let b = NonlinearityBundle::new(
            ScalarFn::cosine(1.0, 1.0),
            ScalarFn::zero(),
            ScalarFn::affine(1.0, 0.0),
            ScalarFn::identity(1.0),
        )
        .unwrap();
        ProblemSpec::new(b, Grid1D::new(n).unwrap(), 0.0, 0.0).unwrap()
    }

    #[test]
    fn lambda_is_confined() {
        let b = NonlinearityBundle::sine_benchmark();
        let g = Grid1D::new(3).unwrap();
        assert!(ProblemSpec::new(b.clone(), g, 1.0, 1.0).is_err());
        assert!(ProblemSpec::new(b.clone(), g, 1.0, -1.0).is_err());
        assert!(ProblemSpec::new(b.clone(), g, -1.0, 0.0).is_err());
        assert!(ProblemSpec::new(b, g, 1.0, 1.0 - 1e-8).is_ok());
    }

    #[test]
    fn energy_at_zero_is_minus_coupling_term() {
        // λ = 1 sits on the boundary, so use the closest admissible value
        let lambda = lambda_bounds(&NonlinearityBundle::sine_benchmark()).1;
        let spec = benchmark(3, 1.0, lambda);
        let e = energy(&spec, &Field::zeros(spec.grid())).unwrap();
        let expected = -0.5 * (4.0 / (4.0 - lambda * lambda)).ln();
        assert_abs_diff_eq!(e.total, expected, epsilon = 1e-14);
        assert_eq!((e.kirchhoff, e.g_part, e.jf), (0.0, 0.0, 0.0));
        assert_abs_diff_eq!(e.total, -0.143_841_036_225_890_1, epsilon = 1e-8);
    }

    #[test]
    fn energy_without_coupling_is_half_norm() {
        let spec = quadratic(9);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let u = random_field(spec.grid(), &mut rng, 2.0);
            let e = energy(&spec, &u).unwrap();
            assert!((e.total - 0.5 * u.norm_sq()).abs() < 1e-13);
            assert_eq!(e.total, e.kirchhoff - e.g_part - e.h_part);
        }
    }

    #[test]
    fn residual_at_zero_example() {
        let lambda = lambda_bounds(&NonlinearityBundle::sine_benchmark()).1;
        let spec = benchmark(3, 1.0, lambda);
        let r = residual(&spec, &Field::zeros(spec.grid())).unwrap();
        // -μ h(-λ) Δ with h(-1) = -1/3
        let t = -lambda;
        let expected = -(t / (4.0 - t * t)) * 0.25;
        for v in r {
            assert_abs_diff_eq!(v, expected, epsilon = 1e-15);
            assert_abs_diff_eq!(v, 0.083_333_333_3, epsilon = 1e-8);
        }
    }

    #[test]
    fn residual_without_coupling_is_scaled_stiffness() {
        let spec = benchmark(15, 0.0, 0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u = random_field(spec.grid(), &mut rng, 1.5);
        let r = residual(&spec, &u).unwrap();
        let kappa = 1.0 + u.norm_sq();
        for (ri, si) in r.iter().zip(u.stiffness_action()) {
            assert!((ri - kappa * si).abs() < 1e-12 * (1.0 + ri.abs()));
        }
    }

    #[test]
    fn residual_matches_energy_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let spec = benchmark(15, rng.random_range(0.0..100.0), rng.random_range(-0.8..0.8));
            let radius = rng.random_range(0.1..2.0);
            let u = random_field(spec.grid(), &mut rng, radius);
            let v = random_field(spec.grid(), &mut rng, 1.0);
            let rv = v.dot(&residual(&spec, &u).unwrap());
            let h = 1e-5;
            let fd = (energy(&spec, &u.axpy(h, &v)).unwrap().total - energy(&spec, &u.axpy(-h, &v)).unwrap().total)
                / (2.0 * h);
            assert!((rv - fd).abs() <= 1e-6 * (1.0 + rv.abs()), "{rv} vs {fd}");
        }
    }

    #[test]
    fn hessian_of_linear_problem_is_stiffness() {
        let spec = quadratic(7);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u = random_field(spec.grid(), &mut rng, 3.0);
        let v = random_field(spec.grid(), &mut rng, 1.0);
        let hv = hessian_action(&spec, &u, &v).unwrap();
        for (a, b) in hv.iter().zip(v.stiffness_action()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn analytic_and_fd_hessians_agree_and_are_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let bundles = [
            NonlinearityBundle::sine_benchmark(),
            NonlinearityBundle::new(
                ScalarFn::new(Kind::Lorentzian, vec![1.0, 0.7]).unwrap(),
                ScalarFn::cosine(0.5, 2.0),
                ScalarFn::new(Kind::PowerK, vec![0.5, 1.0, 2.0]).unwrap(),
                ScalarFn::new(Kind::ExpBased, vec![1.0]).unwrap(),
            )
            .unwrap(),
        ];
        for b in bundles {
            for _ in 0..5 {
                let lambda = rng.random_range(b.alpha() * 0.5..b.beta() * 0.5);
                let spec =
                    ProblemSpec::new(b.clone(), Grid1D::new(15).unwrap(), rng.random_range(1.0..60.0), lambda).unwrap();
                let u = random_field(spec.grid(), &mut rng, 1.0);
                let v = random_field(spec.grid(), &mut rng, 1.0);
                let w = random_field(spec.grid(), &mut rng, 1.0);
                let an = spec.clone().with_hessian_mode(HessianMode::Analytic);
                let fd = spec.clone().with_hessian_mode(HessianMode::FiniteDifference);
                let ha = hessian_action(&an, &u, &v).unwrap();
                let hf = hessian_action(&fd, &u, &v).unwrap();
                let scale = ha.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                for (a, f) in ha.iter().zip(&hf) {
                    assert!((a - f).abs() <= 1e-5 * scale, "{a} vs {f}");
                }
                let hw = hessian_action(&an, &u, &w).unwrap();
                let (vhw, whv) = (v.dot(&hw), w.dot(&ha));
                assert!((vhw - whv).abs() <= 1e-10 * (1.0 + vhw.abs()));
            }
        }
    }

    #[test]
    fn analytic_mode_rejects_c0_bundle() {
        let b = NonlinearityBundle::new(
            ScalarFn::cosine(1.0, 1.0),
            ScalarFn::zero(),
            ScalarFn::new(Kind::PowerK, vec![1.0, 1.0, 0.5]).unwrap(),
            ScalarFn::identity(1.0),
        )
        .unwrap();
        let spec = ProblemSpec::new(b, Grid1D::new(5).unwrap(), 1.0, 0.0).unwrap();
        let u = Field::unit(spec.grid(), 2);
        let an = spec.clone().with_hessian_mode(HessianMode::Analytic);
        assert!(matches!(hessian_action(&an, &u, &u), Err(Error::Smoothness { which: "k" })));
        // auto mode falls back to finite differences
        let op = HessianOperator::new(&spec, &u).unwrap();
        assert!(!op.is_analytic());
        assert!(op.apply(&u).is_ok());
    }

    #[test]
    fn gradient_inverse_examples() {
        let b = NonlinearityBundle::sine_benchmark();
        let g = Grid1D::new(7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let u = random_field(g, &mut rng, 2.0);
        assert!(gradient_inverse_check(&b, &u).unwrap() < 1e-10);
        let unit_k = NonlinearityBundle { kirchhoff: ScalarFn::affine(1.0, 0.0), ..b };
        for _ in 0..10 {
            let radius = rng.random_range(0.1..10.0);
            let u = random_field(g, &mut rng, radius);
            assert_eq!(gradient_inverse_check(&unit_k, &u).unwrap(), 0.0);
        }
    }

    #[test]
    fn odd_bundle_transports_symmetry() {
        let b = NonlinearityBundle::new(
            ScalarFn::cosine(1.0, 1.0),
            ScalarFn::zero(),
            ScalarFn::affine(1.0, 1.0),
            ScalarFn::identity(1.0),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let lambda = rng.random_range(-0.9..0.9);
            let plus = ProblemSpec::new(b.clone(), Grid1D::new(15).unwrap(), 30.0, lambda).unwrap();
            let minus = plus.with_lambda(-lambda).unwrap();
            let radius = rng.random_range(0.1..3.0);
            let u = random_field(plus.grid(), &mut rng, radius);
            let a = residual(&plus, &u.scaled(-1.0)).unwrap();
            let c = residual(&minus, &u).unwrap();
            for (x, y) in a.iter().zip(&c) {
                assert!((x + y).abs() <= 1e-12);
            }
            let ea = energy(&plus, &u.scaled(-1.0)).unwrap().total;
            let ec = energy(&minus, &u).unwrap().total;
            assert!((ea - ec).abs() <= 1e-12 * (1.0 + ea.abs()));
        }
    }

    #[test]
    fn source_integral_stays_in_bounds() {
        let spec = benchmark(15, 10.0, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10_000 {
            let radius = rng.random_range(0.0..200.0);
            let u = random_field(spec.grid(), &mut rng, radius);
            let j = spec.source_integral(&u).unwrap();
            assert!((-1.0..=1.0).contains(&j));
        }
    }

    #[test]
    fn energy_is_coercive_along_rays() {
        let spec = benchmark(15, 50.0, 0.2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let w = random_field(spec.grid(), &mut rng, 1.0);
            let e = |t: f64| energy(&spec, &w.scaled(t)).unwrap().total;
            let (e1, e2, e3) = (e(10.0), e(1e2), e(1e3));
            assert!(e1 < e2 && e2 < e3);
            assert!(e3 > 1e10);
        }
    }
}
