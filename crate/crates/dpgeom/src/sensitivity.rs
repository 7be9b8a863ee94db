//! Sensitivity-set descriptions, clipping operators, and the worst-case
//! (dominating) sensitivity under coordinate-wise sampling.

use serde::{Deserialize, Serialize};

use crate::subspace::OrthoBasis;
use crate::{ensure_finite, Error, Result};

/// Relative tolerance for membership checks after clipping; double-precision
/// rotation round-trips stay comfortably inside this.
pub const MEMBERSHIP_TOL: f64 = 1e-12;

/// Per-subspace clipping budget: an ℓ2 radius plus an optional per-coordinate
/// ℓ∞ cap. When both `cinf` and `d0` are given they must satisfy
/// c2² = d0·cinf².
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubspaceClip {
    pub rank: usize,
    pub c2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cinf: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d0: Option<usize>,
}

impl SubspaceClip {
    pub fn l2_only(rank: usize, c2: f64) -> Self {
        SubspaceClip {
            rank,
            c2,
            cinf: None,
            d0: None,
        }
    }

    /// ℓ2 radius split as c2 = √d0 · cinf.
    pub fn with_linf_budget(rank: usize, c2: f64, d0: usize) -> Self {
        SubspaceClip {
            rank,
            c2,
            cinf: Some(c2 / (d0 as f64).sqrt()),
            d0: Some(d0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::validation("subspace rank must be positive"));
        }
        if !(self.c2 > 0.0 && self.c2.is_finite()) {
            return Err(Error::validation(format!(
                "subspace c2 must be positive, got {}",
                self.c2
            )));
        }
        if let Some(cinf) = self.cinf {
            if !(cinf > 0.0 && cinf.is_finite()) {
                return Err(Error::validation("subspace cinf must be positive"));
            }
            if cinf > self.c2 * (1.0 + 1e-12) {
                return Err(Error::validation(format!(
                    "subspace cinf {} exceeds c2 {}",
                    cinf, self.c2
                )));
            }
        }
        if let Some(d0) = self.d0 {
            if d0 == 0 || d0 > self.rank {
                return Err(Error::validation(format!(
                    "d0 = {d0} must lie in 1..=rank ({})",
                    self.rank
                )));
            }
            if let Some(cinf) = self.cinf {
                let implied = self.c2 * self.c2;
                let product = d0 as f64 * cinf * cinf;
                if (implied - product).abs() > 1e-9 * implied.max(1.0) {
                    return Err(Error::validation(format!(
                        "c2^2 = {implied} does not match d0*cinf^2 = {product}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Effective ℓ∞ cap used by the accountant: the block's own cap when set,
    /// otherwise the full radius (a one-hot vertex dominates).
    pub fn effective_cinf(&self) -> f64 {
        self.cinf.unwrap_or(self.c2)
    }

    /// Effective number of saturated coordinates in the dominating vertex.
    pub fn effective_d0(&self) -> usize {
        self.d0.unwrap_or(1)
    }
}

/// Declarative description of a sensitivity set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum SensitivitySpec {
    /// {s : ‖s‖2 ≤ c2}
    L2Ball { c2: f64 },
    /// {s : ‖s‖p ≤ cp, ‖s‖∞ ≤ cinf} for p ∈ (0, 2]
    LpLinfMix { p: f64, cp: f64, cinf: f64 },
    /// Axis-aligned box with per-coordinate half-sides (zeros allowed).
    Hypercube { sides: Vec<f64> },
    /// Per-subspace ℓ2 (and optional ℓ∞) budgets under a chosen basis.
    Hybrid { blocks: Vec<SubspaceClip> },
}

impl SensitivitySpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            SensitivitySpec::L2Ball { c2 } => {
                if !(*c2 > 0.0 && c2.is_finite()) {
                    return Err(Error::validation("l2 ball radius must be positive"));
                }
            }
            SensitivitySpec::LpLinfMix { p, cp, cinf } => {
                if !(*p > 0.0 && *p <= 2.0) {
                    return Err(Error::validation(format!("p must lie in (0, 2], got {p}")));
                }
                if !(*cp > 0.0 && cp.is_finite()) || !(*cinf > 0.0 && cinf.is_finite()) {
                    return Err(Error::validation("mixture radii must be positive"));
                }
            }
            SensitivitySpec::Hypercube { sides } => {
                if sides.is_empty() {
                    return Err(Error::validation("hypercube needs at least one side"));
                }
                ensure_finite("sides", sides)?;
                if sides.iter().any(|&v| v < 0.0) {
                    return Err(Error::validation("hypercube sides must be nonnegative"));
                }
            }
            SensitivitySpec::Hybrid { blocks } => {
                if blocks.is_empty() {
                    return Err(Error::validation("hybrid spec needs at least one block"));
                }
                for b in blocks {
                    b.validate()?;
                }
            }
        }
        Ok(())
    }

    /// Applies the cinf ≤ cp normalization: a vacuous ℓ∞ constraint is
    /// tightened to the ℓp radius.
    pub fn normalized(mut self) -> Result<Self> {
        if let SensitivitySpec::LpLinfMix { cp, cinf, .. } = &mut self {
            if *cinf > *cp {
                *cinf = *cp;
            }
        }
        self.validate()?;
        Ok(self)
    }

    /// Ambient dimension when the variant pins one down.
    pub fn dim(&self) -> Option<usize> {
        match self {
            SensitivitySpec::Hypercube { sides } => Some(sides.len()),
            SensitivitySpec::Hybrid { blocks } => Some(blocks.iter().map(|b| b.rank).sum()),
            _ => None,
        }
    }

    /// Membership test with relative tolerance; hybrid vectors are expected
    /// in the clipping-basis coordinates.
    pub fn contains(&self, v: &[f64], rel_tol: f64) -> bool {
        match self {
            SensitivitySpec::L2Ball { c2 } => l2_norm(v) <= c2 * (1.0 + rel_tol),
            SensitivitySpec::LpLinfMix { p, cp, cinf } => {
                lp_norm(v, *p) <= cp * (1.0 + rel_tol)
                    && linf_norm(v) <= cinf.min(*cp) * (1.0 + rel_tol)
            }
            SensitivitySpec::Hypercube { sides } => {
                v.len() == sides.len()
                    && v.iter()
                        .zip(sides)
                        .all(|(x, s)| x.abs() <= s * (1.0 + rel_tol) + 1e-300)
            }
            SensitivitySpec::Hybrid { blocks } => {
                let d: usize = blocks.iter().map(|b| b.rank).sum();
                if v.len() != d {
                    return false;
                }
                let mut start = 0;
                for b in blocks {
                    let seg = &v[start..start + b.rank];
                    if l2_norm(seg) > b.c2 * (1.0 + rel_tol) {
                        return false;
                    }
                    if let Some(cinf) = b.cinf {
                        if linf_norm(seg) > cinf * (1.0 + rel_tol) {
                            return false;
                        }
                    }
                    start += b.rank;
                }
                true
            }
        }
    }
}

fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn linf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

fn lp_norm(v: &[f64], p: f64) -> f64 {
    v.iter().map(|x| x.abs().powf(p)).sum::<f64>().powf(1.0 / p)
}

/// Projection onto the ℓ2 ball of radius `c2`: v · min{1, c2/‖v‖2}.
/// The zero vector is a fixed point.
pub fn clip_l2(v: &[f64], c2: f64) -> Result<Vec<f64>> {
    ensure_finite("clip_l2 input", v)?;
    if !(c2 > 0.0 && c2.is_finite()) {
        return Err(Error::validation(format!(
            "l2 clipping radius must be positive, got {c2}"
        )));
    }
    let norm = l2_norm(v);
    // The 1e-13 headroom absorbs the rounding of a previous rescale, making
    // repeated clipping an exact fixed point.
    if norm <= c2 * (1.0 + 1e-13) || norm == 0.0 {
        return Ok(v.to_vec());
    }
    let scale = c2 / norm;
    Ok(v.iter().map(|x| x * scale).collect())
}

/// Per-coordinate clamp to [-cinf, cinf].
pub fn clip_linf(v: &[f64], cinf: f64) -> Result<Vec<f64>> {
    ensure_finite("clip_linf input", v)?;
    if !(cinf > 0.0 && cinf.is_finite()) {
        return Err(Error::validation(format!(
            "linf clipping radius must be positive, got {cinf}"
        )));
    }
    Ok(v.iter().map(|x| x.clamp(-cinf, cinf)).collect())
}

/// A clipped vector kept in both frames: the clipping basis and the natural
/// coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct ClippedVector {
    pub natural: Vec<f64>,
    pub in_basis: Vec<f64>,
}

/// Hybrid clipping: express `v` in the basis, ℓ2-clip each block segment to
/// its radius, then apply the block's ℓ∞ clamp when present, and rotate back.
///
/// The ℓ∞ clamp runs after the ℓ2 projection, so the combined result may sit
/// strictly inside the ℓ2 budget.
pub fn clip_hybrid(
    v: &[f64],
    basis: &OrthoBasis,
    blocks: &[SubspaceClip],
) -> Result<ClippedVector> {
    ensure_finite("clip_hybrid input", v)?;
    for b in blocks {
        b.validate()?;
    }
    let block_dim: usize = blocks.iter().map(|b| b.rank).sum();
    if block_dim != basis.dim() {
        return Err(Error::validation(format!(
            "blocks cover dimension {block_dim}, basis has {}",
            basis.dim()
        )));
    }
    if basis.block_ranks() != blocks.iter().map(|b| b.rank).collect::<Vec<_>>().as_slice() {
        return Err(Error::validation(
            "basis block ranks do not match clipping blocks",
        ));
    }
    let mut coords = basis.to_basis(v)?;
    let mut start = 0;
    for b in blocks {
        let seg = clip_l2(&coords[start..start + b.rank], b.c2)?;
        let seg = match b.cinf {
            Some(cinf) => clip_linf(&seg, cinf)?,
            None => seg,
        };
        coords[start..start + b.rank].copy_from_slice(&seg);
        start += b.rank;
    }
    let natural = basis.from_basis(&coords)?;
    Ok(ClippedVector {
        natural,
        in_basis: coords,
    })
}

/// Worst-case vertex of {‖s‖p ≤ cp, ‖s‖∞ ≤ cinf}: `d0` coordinates saturated
/// at cinf plus one remainder coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DominatingSensitivity {
    /// Number of coordinates saturated at cinf.
    pub d0: usize,
    /// Remaining budget on one extra coordinate (zero when the budget is
    /// exactly exhausted or the dimension cap binds).
    pub c_rem: f64,
}

impl DominatingSensitivity {
    /// Materializes the worst-case vector (cinf, …, cinf, c_rem, 0, …, 0).
    pub fn vector(&self, cinf: f64, d: usize) -> Vec<f64> {
        let mut v = vec![0.0; d];
        for slot in v.iter_mut().take(self.d0) {
            *slot = cinf;
        }
        if self.c_rem > 0.0 && self.d0 < d {
            v[self.d0] = self.c_rem;
        }
        v
    }

    /// ℓ2 norm of the dominating vector.
    pub fn max_l2(&self, cinf: f64) -> f64 {
        (self.d0 as f64 * cinf * cinf + self.c_rem * self.c_rem).sqrt()
    }
}

/// Computes the dominating sensitivity of the ℓp∩ℓ∞ set in dimension `d`:
/// d0 = ⌊(cp/cinf)^p⌋ capped at d, with the leftover ℓp budget assigned to a
/// single remainder coordinate. A vacuous ℓ∞ constraint (cinf ≥ cp) yields
/// the one-hot vertex (d0 = 1, c_rem = 0) at magnitude cp.
pub fn dominating_sensitivity(
    p: f64,
    cp: f64,
    cinf: f64,
    d: usize,
) -> Result<DominatingSensitivity> {
    if !(p > 0.0 && p <= 2.0) {
        return Err(Error::validation(format!("p must lie in (0, 2], got {p}")));
    }
    if !(cp > 0.0 && cp.is_finite()) || !(cinf > 0.0 && cinf.is_finite()) {
        return Err(Error::validation("radii must be positive and finite"));
    }
    if d == 0 {
        return Err(Error::validation("dimension must be positive"));
    }
    if cinf >= cp {
        return Ok(DominatingSensitivity { d0: 1, c_rem: 0.0 });
    }
    let ratio_pow = (cp / cinf).powf(p);
    // Absorb one ulp of rounding before flooring so exactly-divisible budgets
    // land on the intended integer.
    let mut d0 = (ratio_pow * (1.0 + 4.0 * f64::EPSILON)).floor() as usize;
    d0 = d0.max(1);
    if d0 >= d {
        return Ok(DominatingSensitivity { d0: d, c_rem: 0.0 });
    }
    let leftover = cp.powf(p) - d0 as f64 * cinf.powf(p);
    let rel = leftover / cp.powf(p);
    let c_rem = if rel <= 1e-12 {
        0.0
    } else {
        leftover.powf(1.0 / p).min(cinf)
    };
    Ok(DominatingSensitivity { d0, c_rem })
}
