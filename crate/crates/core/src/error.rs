use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid value for `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("not a second-order model")]
    NotSecondOrder,

    #[error("unsupported combination: {0}")]
    Unsupported(String),

    #[error("closed form out of scope: {0}")]
    OutOfScope(String),

    #[error("grid too coarse for t_c: {0}")]
    GridTooCoarse(String),

    #[error("Riemann sum not converged: dt = {dt} exceeds 2*pi/(10*omega) = {limit}")]
    RiemannNotConverged { dt: f64, limit: f64 },

    #[error("quadrature did not converge: estimate {estimate:e}, error estimate {error:e}")]
    QuadratureNonConvergence { estimate: f64, error: f64 },

    #[error("index {index} out of range for {len} points")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("need at least {needed} realizations, got {got}")]
    TooFewRealizations { needed: usize, got: usize },

    #[error("window too small: {usable} usable points, need 6")]
    WindowTooSmall { usable: usize },

    #[error("fit did not converge after {iterations} iterations (best objective {objective:e})")]
    FitNonConvergence {
        iterations: usize,
        objective: f64,
        best: Vec<(String, f64)>,
    },

    #[error("unidentifiable in this regime: {}", fmt_dependency(.dependency))]
    Unidentifiable { dependency: Vec<(String, f64)> },

    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn fmt_dependency(dep: &[(String, f64)]) -> String {
    dep.iter()
        .map(|(n, d)| format!("{n}: dependency {d:.5}"))
        .collect::<Vec<_>>()
        .join(", ")
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(field: &str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        field: field.to_string(),
        reason: reason.into(),
    }
}
