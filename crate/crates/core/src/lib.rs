//! Critical points of nonlocal Kirchhoff-type energies on the unit interval.

// `!(x >= 0.0)` style checks are used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod discretization;
pub mod energy;
pub mod error;
pub mod minimax;
pub mod nonlinearity;
pub mod quadrature;
pub mod solver;

pub use error::{Error, Result};
