//! Run configurations: JSON files merged with command-line overrides. Flags
//! win over file values; the fully-resolved struct is written next to the
//! outputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dpgeom::rdp::MechanismSpec;
use dpgeom::sensitivity::SubspaceClip;
use dpgeom::{Error, Result};

/// Environment variable overriding the default alpha-grid ceiling (256).
pub const ALPHA_MAX_ENV: &str = "DPGEOM_ALPHA_MAX";

pub fn default_alpha_max() -> u32 {
    std::env::var(ALPHA_MAX_ENV)
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(256)
}

/// Builds the integer order grid 2..=alpha_max.
pub fn alpha_grid(alpha_max: Option<u32>) -> Result<Vec<u32>> {
    let hi = alpha_max.unwrap_or_else(default_alpha_max);
    if hi < 2 {
        return Err(Error::validation(format!(
            "alpha ceiling must be at least 2, got {hi}"
        )));
    }
    Ok((2..=hi).collect())
}

pub fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    dpgeom::io::read_json(path)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpsilonConfig {
    pub mechanism: MechanismSpec,
    pub t: u64,
    pub delta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_max: Option<u32>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CompareConfig {
    pub t: u64,
    pub delta: f64,
    pub target_eps: f64,
    pub baseline: MechanismSpec,
    pub candidate: MechanismSpec,
    /// When candidate is a twice-sampled hybrid spec, run the per-block
    /// noise optimizer instead of scaling a fixed shape.
    #[serde(default)]
    pub optimize_candidate_blocks: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_max: Option<u32>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimulateConfig {
    /// Sample matrix CSV, one sample per row.
    pub input: PathBuf,
    /// Clipping basis files; the identity basis is used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub basis_csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub basis_meta: Option<PathBuf>,
    pub blocks: Vec<SubspaceClip>,
    pub q1: f64,
    pub q2: f64,
    /// Per-block noise standard deviations.
    pub sigmas: Vec<f64>,
    pub seed: u64,
    pub t: u64,
    pub delta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_max: Option<u32>,
}

/// Resolved basis-generation parameters, echoed next to the outputs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BasisConfig {
    pub input: PathBuf,
    pub ranks: Vec<usize>,
    pub power_iters: usize,
    pub seed: u64,
}

/// Resolved amplification-sweep parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AmplifyConfig {
    pub c2: f64,
    pub q: f64,
    pub q2_list: Vec<f64>,
    pub d0_list: Vec<usize>,
    pub alpha_list: Vec<u32>,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub sigma_steps: usize,
}

pub fn ensure_out_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    Ok(())
}
