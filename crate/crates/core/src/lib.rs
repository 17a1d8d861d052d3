//! Manifold-informed reduced-order models for mass-conserving crowd dynamics.
//!
//! The pipeline simulates ground-truth density fields with the Hughes model,
//! learns latent coordinates (POD or Diffusion Maps), fits a delay-coordinate
//! MVAR surrogate in latent space, lifts forecasts back with mass-preserving
//! decoders and scores them with L2 and Wasserstein-1 metrics.

pub mod dataset;
pub mod dmaps;
pub mod error;
pub mod grid;
pub mod hughes;
pub mod knn_lift;
pub mod metrics;
pub mod mvar;
pub mod pipeline;
pub mod pod;

pub use error::{Error, Result};

/// Formats a float with 17 significant digits, enough to round-trip any f64.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}
