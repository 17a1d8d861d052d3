use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("wrong field quantity: expected {expected}, got {got}")]
    Quantity {
        expected: &'static str,
        got: &'static str,
    },

    #[error("infeasible mass: peak density {peak} would reach rho_max {rho_max}")]
    InfeasibleMass { peak: f64, rho_max: f64 },

    #[error("eikonal solver did not converge after {sweeps} iterations (residual {residual:e})")]
    NoConvergence { sweeps: usize, residual: f64 },

    #[error("stability error: {0}")]
    Stability(String),

    #[error("conservation error: {0}")]
    Conservation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("rank deficiency: {0}")]
    RankDeficient(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("forecast diverged at step {step} (|y| = {norm:e})")]
    Instability { step: usize, norm: f64 },

    #[error("zero mass distribution")]
    ZeroMass,

    #[error("unequal masses {0} and {1}")]
    UnequalMass(f64, f64),

    #[error("support too large ({product} > cap {cap}); enable coarsening")]
    SupportTooLarge { product: usize, cap: usize },

    #[error("time misalignment at snapshot {index}: {truth} vs {approx}")]
    TimeMisalignment { index: usize, truth: f64, approx: f64 },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: String, expected: String },

    #[error("checksum mismatch for {0}")]
    Checksum(PathBuf),

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("lineage mismatch: {0}")]
    Lineage(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
