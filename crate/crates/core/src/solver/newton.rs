//! Local kernels: preconditioned descent, Newton refinement and deflated
//! Newton.

use nalgebra::{DMatrix, DVector};

use super::{CriticalPoint, Origin, SolverConfig};
use crate::discretization::{max_abs, solve_stiffness, Field};
use crate::energy::{energy, residual, HessianOperator, ProblemSpec};
use crate::error::{Error, Result};

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 50;

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Energy and residual at a trial point; `None` when the point leaves the
/// domain of the coupling nonlinearity.
fn probe(spec: &ProblemSpec, u: &Field) -> Result<Option<(f64, Vec<f64>)>> {
    match energy(spec, u) {
        Ok(e) if e.total.is_finite() => Ok(Some((e.total, residual(spec, u)?))),
        Ok(_) | Err(Error::Domain { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Descent on the energy along the H¹₀ representative of the residual, with
/// Armijo backtracking, until `‖r‖∞ ≤ handoff_factor · newton_tol`.
pub fn descend(spec: &ProblemSpec, u0: &Field, cfg: &SolverConfig) -> Result<Field> {
    let target = cfg.handoff_factor * cfg.newton_tol;
    let grid = spec.grid();
    let (mut e, mut r) = probe(spec, u0)?
        .ok_or_else(|| Error::Domain { value: f64::NAN, domain: "start point outside the coupling domain".into() })?;
    let mut u = u0.clone();
    let mut step = 1.0;
    for it in 0..cfg.descend_max_iter {
        if max_abs(&r) <= target {
            return Ok(u);
        }
        let dir = Field::new(grid, solve_stiffness(grid, &r).into_iter().map(|x| -x).collect())?;
        let slope = dir.dot(&r);
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let trial = u.axpy(step, &dir);
            if let Some((et, rt)) = probe(spec, &trial)? {
                if et <= e + ARMIJO * step * slope {
                    accepted = Some((trial, et, rt));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((trial, et, rt)) = accepted else {
            return Err(Error::Stall { iterations: it, residual: max_abs(&r) });
        };
        if trial == u {
            return Err(Error::Stall { iterations: it, residual: max_abs(&r) });
        }
        // Barzilai-Borwein guess for the next step in the H¹₀ metric
        let s = trial.sub(&u);
        let sy: f64 = s.coeffs().iter().zip(rt.iter().zip(&r)).map(|(si, (a, b))| si * (a - b)).sum();
        let ss = s.norm_sq();
        step = if sy > 0.0 { (ss / sy).clamp(1e-6, cfg.max_step) } else { (step * 2.0).min(cfg.max_step) };
        u = trial;
        e = et;
        r = rt;
    }
    if max_abs(&r) <= target {
        Ok(u)
    } else {
        Err(Error::Stall { iterations: cfg.descend_max_iter, residual: max_abs(&r) })
    }
}

/// Linear solve `J x = b` with a condition estimate on failure.
fn solve_dense(jac: DMatrix<f64>, rhs: &[f64]) -> Result<Vec<f64>> {
    let b = DVector::from_column_slice(rhs);
    let lu = jac.clone().lu();
    if let Some(x) = lu.solve(&b) {
        if x.iter().all(|v| v.is_finite()) {
            return Ok(x.iter().copied().collect());
        }
    }
    let sv = jac.singular_values();
    let max = sv.max();
    let min = sv.min();
    Err(Error::SingularSystem { condition: if min > 0.0 { max / min } else { f64::INFINITY } })
}

fn newton_direction(spec: &ProblemSpec, u: &Field, r: &[f64]) -> Result<Vec<f64>> {
    let jac = HessianOperator::new(spec, u)?.assemble()?;
    let neg: Vec<f64> = r.iter().map(|x| -x).collect();
    solve_dense(jac, &neg)
}

/// Outcome of a Newton refinement with the ∞-norm residual after every
/// iteration (entry 0 is the starting residual).
#[derive(Debug, Clone)]
pub struct NewtonRun {
    pub point: CriticalPoint,
    pub history: Vec<f64>,
}

/// Damped Newton iteration on the residual, accepted at `‖r‖∞ ≤ newton_tol`.
pub fn newton_refine(spec: &ProblemSpec, u0: &Field, cfg: &SolverConfig, origin: Origin) -> Result<NewtonRun> {
    let grid = spec.grid();
    let mut u = u0.clone();
    let mut r = residual(spec, &u)?;
    let mut history = vec![max_abs(&r)];
    for _ in 0..=cfg.max_newton {
        let res = max_abs(&r);
        if res <= cfg.newton_tol {
            return Ok(NewtonRun { point: CriticalPoint::new(spec, u, res, origin)?, history });
        }
        if history.len() > cfg.max_newton {
            break;
        }
        let dir = Field::new(grid, newton_direction(spec, &u, &r)?)?;
        let n0 = norm2(&r);
        let mut step = 1.0;
        let mut next = None;
        for _ in 0..MAX_HALVINGS {
            let trial = u.axpy(step, &dir);
            match residual(spec, &trial) {
                Ok(rt) if norm2(&rt) < n0 || step < 1.0 / 1024.0 => {
                    next = Some((trial, rt));
                    break;
                }
                Ok(_) | Err(Error::Domain { .. }) => step *= 0.5,
                Err(e) => return Err(e),
            }
        }
        let Some((un, rn)) = next else { break };
        u = un;
        r = rn;
        history.push(max_abs(&r));
    }
    Err(Error::NoConvergence { iterations: history.len() - 1, residual: max_abs(&r) })
}

/// Multiplicative deflation operator `Π (d(u, u_i)^{-p} + shift)`.
#[derive(Debug, Clone)]
pub struct Deflation<'a> {
    pub known: &'a [Field],
    pub power: f64,
    pub shift: f64,
}

impl Deflation<'_> {
    pub fn factor(&self, u: &Field) -> f64 {
        self.known.iter().map(|k| u.h1_distance(k).powf(-self.power) + self.shift).product()
    }

    /// Gradient of `ln` of [`Deflation::factor`] with respect to the coefficients.
    pub fn log_gradient(&self, u: &Field) -> Vec<f64> {
        let mut g = vec![0.0; u.len()];
        for k in self.known {
            let diff = u.sub(k);
            let d = diff.norm();
            let dp = d.powf(-self.power);
            let c = -self.power * dp / (d * d) / (dp + self.shift);
            for (gi, si) in g.iter_mut().zip(diff.stiffness_action()) {
                *gi += c * si;
            }
        }
        g
    }

    /// Deflated residual `M(u) r(u)`.
    pub fn residual(&self, spec: &ProblemSpec, u: &Field) -> Result<Vec<f64>> {
        let m = self.factor(u);
        Ok(residual(spec, u)?.into_iter().map(|x| m * x).collect())
    }
}

/// Newton's method on the deflated residual. Converges on the undeflated
/// residual criterion `‖r‖∞ ≤ newton_tol`.
pub fn deflated_newton(
    spec: &ProblemSpec,
    u0: &Field,
    deflation: &Deflation<'_>,
    cfg: &SolverConfig,
    origin: Origin,
) -> Result<CriticalPoint> {
    let grid = spec.grid();
    let mut u = u0.clone();
    let mut r = residual(spec, &u)?;
    for it in 0..cfg.max_deflated_newton {
        let res = max_abs(&r);
        if res <= cfg.newton_tol {
            return CriticalPoint::new(spec, u, res, origin);
        }
        let delta = newton_direction(spec, &u, &r)?;
        let dfield = Field::new(grid, delta)?;
        let denom = 1.0 - dfield.dot(&deflation.log_gradient(&u));
        let scale = if denom.abs() > 1e-12 { 1.0 / denom } else { 1.0 };
        let dir = dfield.scaled(scale);
        let g0 = norm2(&r) * deflation.factor(&u);
        let mut step = 1.0;
        let mut next = None;
        for _ in 0..MAX_HALVINGS {
            let trial = u.axpy(step, &dir);
            match residual(spec, &trial) {
                Ok(rt) if norm2(&rt) * deflation.factor(&trial) < g0 || step < 1.0 / 1024.0 => {
                    next = Some((trial, rt));
                    break;
                }
                Ok(_) | Err(Error::Domain { .. }) => step *= 0.5,
                Err(e) => return Err(e),
            }
        }
        let Some((un, rn)) = next else {
            return Err(Error::NoConvergence { iterations: it, residual: res });
        };
        if !un.coeffs().iter().all(|x| x.is_finite()) {
            return Err(Error::NoConvergence { iterations: it, residual: res });
        }
        u = un;
        r = rn;
    }
    let res = max_abs(&r);
    if res <= cfg.newton_tol {
        return CriticalPoint::new(spec, u, res, origin);
    }
    Err(Error::NoConvergence { iterations: cfg.max_deflated_newton, residual: res })
}
