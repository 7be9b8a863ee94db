//! Privacy accounting and noise calibration for sensitivity sets with
//! geometric structure.
//!
//! The crate covers the full pipeline for releasing aggregate statistics under
//! Rényi differential privacy when the per-sample contribution is confined to
//! a structured set (an ℓ2 ball, an ℓp∩ℓ∞ intersection, a hypercube, or a
//! per-subspace "hybrid" clipping region):
//!
//! * [`sensitivity`] — clipping operators and worst-case (dominating)
//!   sensitivity vectors;
//! * [`subspace`] — power-method principal-subspace approximation used to
//!   pick the clipping basis from public samples;
//! * [`rdp`] — closed-form Rényi-DP curves for the pure, input-sampled,
//!   coordinate-sampled and twice-sampled Gaussian mechanisms, plus
//!   composition, conversion to (ε, δ), and σ calibration;
//! * [`noise`] — minimal-variance Gaussian profiles for symmetric, hypercube
//!   and hybrid sensitivity sets, and the constrained per-block noise
//!   optimizer for twice sampling;
//! * [`sampler`] — executable coordinate-wise / twice-sampling aggregation
//!   and the full hybrid-clipping release pipeline;
//! * [`oracle`] — independent numerical checks: quadrature Rényi divergences,
//!   exact small-instance mixture divergences, brute-force loss suprema and
//!   convexity/majorization spot checks.
//!
//! All operations are pure functions over immutable inputs; anything
//! randomized takes an explicit seed and is reproducible bit-for-bit.

pub mod io;
pub mod noise;
pub mod numeric;
pub mod oracle;
pub mod rdp;
pub mod sampler;
pub mod sensitivity;
pub mod subspace;

use thiserror::Error;

/// Crate-wide error type.
///
/// The variants deliberately mirror the CLI exit-code classes: validation
/// problems (bad arguments, malformed files), unsupported parameter
/// combinations, infeasible calibration targets and numeric failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("validation: {0}")]
    Validation(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("numeric: {0}")]
    Numeric(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
    pub fn unsupported(msg: impl Into<String>) -> Self {
        Error::Unsupported(msg.into())
    }
    pub fn infeasible(msg: impl Into<String>) -> Self {
        Error::Infeasible(msg.into())
    }
    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}

/// Rejects non-finite entries; used by every operation that ingests raw data.
pub(crate) fn ensure_finite(name: &str, values: &[f64]) -> Result<()> {
    for (i, v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::validation(format!("{name}[{i}] is not finite: {v}")));
        }
    }
    Ok(())
}
