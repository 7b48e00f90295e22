use thiserror::Error;

/// Errors raised by the numerical kernels and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("argument {value} lies outside the domain {domain}")]
    Domain { value: f64, domain: String },

    #[error("adaptive quadrature on [{a}, {b}] did not reach tolerance within depth {depth}")]
    Quadrature { a: f64, b: f64, depth: usize },

    #[error("primitive is unbounded on the scan: |F| reached {reached:e} (cap {cap:e})")]
    Unbounded { reached: f64, cap: f64 },

    #[error("function is identically zero on the scan")]
    Degenerate,

    #[error("could not bracket {target} for the radial inverse after {doublings} doublings")]
    Bracket { target: f64, doublings: usize },

    #[error("non-finite value {value} at node {node}")]
    NonFinite { node: usize, value: f64 },

    #[error("analytic Hessian requested but `{which}` is only C0")]
    Smoothness { which: &'static str },

    #[error("descent stalled after {iterations} iterations at residual {residual:e}")]
    Stall { iterations: usize, residual: f64 },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("singular linear system (condition estimate {condition:e})")]
    SingularSystem { condition: f64 },

    #[error("no sample qualifies for the threshold ratio")]
    EmptyAdmissible,

    #[error("degenerate parameter interval [{lo}, {hi}]")]
    DegenerateInterval { lo: f64, hi: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
