//! Exhaustive residual scan on tiny grids, used as an independent oracle.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{newton_refine, CriticalPointSet, Origin, SolverConfig};
use crate::discretization::Field;
use crate::energy::{residual, ProblemSpec};
use crate::error::{Error, Result};

pub const MAX_DIM: usize = 3;
pub const MAX_RESOLUTION: usize = 401;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BruteForceConfig {
    /// Coefficients range over `[-half_width, half_width]`.
    pub half_width: f64,
    /// Samples per axis.
    pub resolution: usize,
}

impl Default for BruteForceConfig {
    fn default() -> Self {
        Self { half_width: 10.0, resolution: 201 }
    }
}

/// Two grid candidates that refined to the same critical point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolutionWarning {
    pub cell: Vec<usize>,
    pub duplicate_of: usize,
}

#[derive(Debug, Clone)]
pub struct BruteForceResult {
    pub set: CriticalPointSet,
    pub candidates: usize,
    pub warnings: Vec<ResolutionWarning>,
}

fn unravel(mut idx: usize, m: usize, dim: usize) -> Vec<usize> {
    let mut out = vec![0; dim];
    for slot in out.iter_mut() {
        *slot = idx % m;
        idx /= m;
    }
    out
}

fn ravel(cell: &[usize], m: usize) -> usize {
    cell.iter().rev().fold(0, |acc, &c| acc * m + c)
}

/// Scans the residual over the tensor grid and Newton-refines two kinds of
/// candidates: discrete local minima of `‖r‖₂` whose value is at most twice
/// the largest variation to a neighbor, and centers of cells across which
/// every residual component changes sign. Returns the distinct refined points.
pub fn brute_force(spec: &ProblemSpec, bf: &BruteForceConfig, cfg: &SolverConfig) -> Result<BruteForceResult> {
    let grid = spec.grid();
    let dim = grid.n_interior();
    let m = bf.resolution;
    if dim > MAX_DIM {
        return Err(Error::InvalidParameter(format!("brute force needs N <= {MAX_DIM}, got {dim}")));
    }
    if !(2..=MAX_RESOLUTION).contains(&m) {
        return Err(Error::InvalidParameter(format!("resolution must lie in 2..={MAX_RESOLUTION}, got {m}")));
    }
    if !(bf.half_width > 0.0) {
        return Err(Error::InvalidParameter(format!("half_width must be positive, got {}", bf.half_width)));
    }
    let coord = |i: usize| -bf.half_width + 2.0 * bf.half_width * i as f64 / (m - 1) as f64;
    let total = m.pow(dim as u32);
    // ‖r‖₂ and the sign pattern of r at every node
    let values: Vec<(f64, u8)> = (0..total)
        .into_par_iter()
        .map(|idx| {
            let c = unravel(idx, m, dim).into_iter().map(coord).collect();
            match residual(spec, &Field::new(grid, c).expect("dimension matches")) {
                Ok(r) => {
                    let signs = r.iter().enumerate().fold(0u8, |acc, (k, x)| acc | (u8::from(*x >= 0.0) << k));
                    (r.iter().map(|x| x * x).sum::<f64>().sqrt(), signs)
                }
                Err(_) => (f64::INFINITY, 0),
            }
        })
        .collect();

    let offsets: Vec<Vec<isize>> = (0..3usize.pow(dim as u32))
        .map(|k| unravel(k, 3, dim).into_iter().map(|o| o as isize - 1).collect::<Vec<_>>())
        .filter(|o| o.iter().any(|&x| x != 0))
        .collect();
    let candidates: Vec<usize> = (0..total)
        .into_par_iter()
        .filter(|&idx| {
            let v = values[idx].0;
            if !v.is_finite() {
                return false;
            }
            let cell = unravel(idx, m, dim);
            let mut spread = 0.0f64;
            for o in &offsets {
                let nb: Option<Vec<usize>> = cell
                    .iter()
                    .zip(o)
                    .map(|(&c, &d)| {
                        let x = c as isize + d;
                        (0..m as isize).contains(&x).then_some(x as usize)
                    })
                    .collect();
                let Some(nb) = nb else { continue };
                let j = ravel(&nb, m);
                let w = values[j].0;
                // ties go to the lower index
                if w < v || (w == v && j < idx) {
                    return false;
                }
                spread = spread.max(w - v);
            }
            v <= 2.0 * spread
        })
        .collect();

    // cells whose corners see both signs in every residual component
    let corners: Vec<Vec<usize>> = (0..1usize << dim).map(|k| unravel(k, 2, dim)).collect();
    let full = (1u8 << dim) - 1;
    let cells: Vec<usize> = (0..total)
        .into_par_iter()
        .filter(|&idx| {
            let cell = unravel(idx, m, dim);
            if cell.iter().any(|&c| c + 1 >= m) {
                return false;
            }
            let (mut any_pos, mut any_neg) = (0u8, 0u8);
            for o in &corners {
                let nb: Vec<usize> = cell.iter().zip(o).map(|(c, d)| c + d).collect();
                let (v, signs) = values[ravel(&nb, m)];
                if !v.is_finite() {
                    return false;
                }
                any_pos |= signs;
                any_neg |= !signs & full;
            }
            any_pos == full && any_neg == full
        })
        .collect();

    let starts: Vec<(usize, Vec<f64>)> = candidates
        .iter()
        .map(|&idx| (idx, unravel(idx, m, dim).into_iter().map(coord).collect()))
        .chain(cells.iter().map(|&idx| {
            let half = bf.half_width / (m - 1) as f64;
            (idx, unravel(idx, m, dim).into_iter().map(|c| coord(c) + half).collect())
        }))
        .collect();
    let refined: Vec<Option<super::CriticalPoint>> = starts
        .par_iter()
        .map(|(idx, c)| {
            let u0 = Field::new(grid, c.clone()).expect("dimension matches");
            newton_refine(spec, &u0, cfg, Origin::Grid(*idx)).ok().map(|r| r.point)
        })
        .collect();

    let mut set = CriticalPointSet::new(cfg.distinct_tol);
    let mut warnings = Vec::new();
    for ((idx, _), p) in starts.iter().zip(refined) {
        let Some(p) = p else { continue };
        match set.find(&p.u) {
            Some(j) => warnings.push(ResolutionWarning { cell: unravel(*idx, m, dim), duplicate_of: j }),
            None => {
                set.insert(p);
            }
        }
    }
    set.sort_by_energy();
    Ok(BruteForceResult { set, candidates: starts.len(), warnings })
}
