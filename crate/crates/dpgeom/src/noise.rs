//! Minimal-variance Gaussian noise profiles for structured sensitivity sets,
//! the privacy-loss functional they optimize, and the constrained per-block
//! noise optimizer for hybrid clipping under twice sampling.
//!
//! The calibration constant is b0 = √(α/(2ε)): at the optimal profile the
//! loss functional equals 1/b0², and the Gaussian Rényi divergence at the
//! witness sensitivity is (α/2)·loss = ε.

use serde::{Deserialize, Serialize};

use crate::rdp::{
    calibrate_sigma, compose_and_convert, coordinate_sampling_rdp_hybrid, twice_sampling_rdp,
    Conversion, MechanismKind, MechanismSpec, NoiseScale, RdpCurve,
};
use crate::sensitivity::{dominating_sensitivity, SensitivitySpec};
use crate::subspace::OrthoBasis;
use crate::{Error, Result};

/// Unaligned hypercube losses are evaluated by exact vertex enumeration;
/// beyond this dimension the 2^d sweep is rejected rather than approximated.
pub const VERTEX_ENUM_MAX_DIM: usize = 20;

/// b0 = √(α / 2ε), the scale linking a target RDP point to noise magnitude.
pub fn calibration_scale(alpha: u32, target_eps: f64) -> Result<f64> {
    if alpha < 2 {
        return Err(Error::validation("order must be >= 2"));
    }
    if !(target_eps > 0.0 && target_eps.is_finite()) {
        return Err(Error::validation(format!(
            "target epsilon must be positive, got {target_eps}"
        )));
    }
    Ok((alpha as f64 / (2.0 * target_eps)).sqrt())
}

/// An orthonormal basis (implicitly the identity when absent) together with
/// one standard deviation per block of directions.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseProfile {
    block_ranks: Vec<usize>,
    block_sigmas: Vec<f64>,
    basis: Option<OrthoBasis>,
}

impl NoiseProfile {
    pub fn per_block(
        block_ranks: Vec<usize>,
        block_sigmas: Vec<f64>,
        basis: Option<OrthoBasis>,
    ) -> Result<Self> {
        if block_ranks.is_empty() || block_ranks.len() != block_sigmas.len() {
            return Err(Error::validation(
                "block ranks and sigmas must be non-empty and of equal length",
            ));
        }
        if block_ranks.contains(&0) {
            return Err(Error::validation("block ranks must be positive"));
        }
        for &s in &block_sigmas {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::validation(format!(
                    "sigma must be nonnegative and finite, got {s}"
                )));
            }
        }
        if let Some(b) = &basis {
            let d: usize = block_ranks.iter().sum();
            if b.dim() != d {
                return Err(Error::validation(format!(
                    "basis dimension {} does not match profile dimension {d}",
                    b.dim()
                )));
            }
        }
        Ok(NoiseProfile {
            block_ranks,
            block_sigmas,
            basis,
        })
    }

    /// One σ for every direction.
    pub fn isotropic(d: usize, sigma: f64) -> Result<Self> {
        NoiseProfile::per_block(vec![d], vec![sigma], None)
    }

    /// One σ per direction (rank-1 blocks) in the natural basis.
    pub fn per_direction(sigmas: Vec<f64>) -> Result<Self> {
        let d = sigmas.len();
        NoiseProfile::per_block(vec![1; d], sigmas, None)
    }

    pub fn with_basis(mut self, basis: OrthoBasis) -> Result<Self> {
        if basis.dim() != self.dim() {
            return Err(Error::validation("basis/profile dimension mismatch"));
        }
        self.basis = Some(basis);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.block_ranks.iter().sum()
    }

    pub fn block_ranks(&self) -> &[usize] {
        &self.block_ranks
    }

    pub fn block_sigmas(&self) -> &[f64] {
        &self.block_sigmas
    }

    pub fn basis(&self) -> Option<&OrthoBasis> {
        self.basis.as_ref()
    }

    /// Σσ² over all directions, the quantity every optimality statement
    /// minimizes.
    pub fn total_variance(&self) -> f64 {
        self.block_ranks
            .iter()
            .zip(&self.block_sigmas)
            .map(|(&r, &s)| r as f64 * s * s)
            .sum()
    }

    /// Per-direction standard deviations in basis order.
    pub fn expand(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        for (&r, &s) in self.block_ranks.iter().zip(&self.block_sigmas) {
            out.extend(std::iter::repeat_n(s, r));
        }
        out
    }
}

/// Serializable form of a profile (the basis travels separately as CSV).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseProfileFile {
    pub block_ranks: Vec<usize>,
    pub block_sigmas: Vec<f64>,
}

impl From<&NoiseProfile> for NoiseProfileFile {
    fn from(p: &NoiseProfile) -> Self {
        NoiseProfileFile {
            block_ranks: p.block_ranks.clone(),
            block_sigmas: p.block_sigmas.clone(),
        }
    }
}

/// Value of the privacy-loss functional together with a maximizing
/// sensitivity vector when one is available in closed form.
#[derive(Clone, Debug, PartialEq)]
pub struct LossEval {
    pub value: f64,
    /// Maximizer in natural coordinates.
    pub witness: Option<Vec<f64>>,
}

/// Quadratic loss of a single vector: Σ ((v·u_i)/σ_i)², with 0/0 treated as
/// no contribution.
pub fn loss_of_vector(profile: &NoiseProfile, v: &[f64]) -> Result<f64> {
    if v.len() != profile.dim() {
        return Err(Error::validation("vector/profile dimension mismatch"));
    }
    let coords = match profile.basis() {
        Some(b) => b.to_basis(v)?,
        None => v.to_vec(),
    };
    let sigmas = profile.expand();
    let mut loss = 0.0;
    for (x, s) in coords.iter().zip(&sigmas) {
        if *s > 0.0 {
            loss += (x / s) * (x / s);
        } else if x.abs() > 0.0 {
            return Ok(f64::INFINITY);
        }
    }
    Ok(loss)
}

/// sup over the sensitivity set of the quadratic loss sU·Σ⁻¹·(sU)ᵀ.
///
/// Supported combinations: ℓ2 balls (closed form), hypercubes aligned with
/// the profile (closed form) or unaligned in d ≤ 20 (vertex enumeration),
/// and hybrid block sets expressed in the profile's own basis (closed form).
pub fn privacy_loss(profile: &NoiseProfile, set: &SensitivitySpec) -> Result<LossEval> {
    set.validate()?;
    let d = profile.dim();
    let sigmas = profile.expand();
    match set {
        SensitivitySpec::L2Ball { c2 } => {
            let (i_min, s_min) = sigmas
                .iter()
                .copied()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .expect("non-empty profile");
            let value = if s_min > 0.0 {
                c2 * c2 / (s_min * s_min)
            } else {
                f64::INFINITY
            };
            // Witness: radius c2 along the weakest noise direction.
            let mut in_basis = vec![0.0; d];
            in_basis[i_min] = *c2;
            let witness = match profile.basis() {
                Some(b) => b.from_basis(&in_basis)?,
                None => in_basis,
            };
            Ok(LossEval {
                value,
                witness: Some(witness),
            })
        }
        SensitivitySpec::Hypercube { sides } => {
            if sides.len() != d {
                return Err(Error::validation("hypercube/profile dimension mismatch"));
            }
            match profile.basis() {
                None => {
                    // Aligned cube: separable quadratic, any corner maximizes.
                    let mut value = 0.0;
                    for (v, s) in sides.iter().zip(&sigmas) {
                        if *s > 0.0 {
                            value += (v / s) * (v / s);
                        } else if *v > 0.0 {
                            value = f64::INFINITY;
                        }
                    }
                    Ok(LossEval {
                        value,
                        witness: Some(sides.clone()),
                    })
                }
                Some(basis) => {
                    if d > VERTEX_ENUM_MAX_DIM {
                        return Err(Error::unsupported(format!(
                            "vertex enumeration limited to d <= {VERTEX_ENUM_MAX_DIM}, got {d}"
                        )));
                    }
                    // Gray-code walk over sign patterns: each step flips one
                    // coordinate and updates the rotated vector incrementally.
                    let u = basis.columns();
                    let mut signs = vec![1.0_f64; d];
                    let mut y: Vec<f64> = (0..d)
                        .map(|j| (0..d).map(|i| sides[i] * u[(i, j)]).sum())
                        .collect();
                    let loss_of = |y: &[f64]| -> f64 {
                        y.iter()
                            .zip(&sigmas)
                            .map(|(v, s)| {
                                if *s > 0.0 {
                                    (v / s) * (v / s)
                                } else if v.abs() > 1e-14 {
                                    f64::INFINITY
                                } else {
                                    0.0
                                }
                            })
                            .sum()
                    };
                    let mut best = loss_of(&y);
                    let mut best_signs = signs.clone();
                    let total = 1usize << d;
                    for k in 1..total {
                        let flip = k.trailing_zeros() as usize;
                        let delta = -2.0 * signs[flip] * sides[flip];
                        signs[flip] = -signs[flip];
                        for (j, yj) in y.iter_mut().enumerate() {
                            *yj += delta * u[(flip, j)];
                        }
                        let value = loss_of(&y);
                        if value > best {
                            best = value;
                            best_signs.copy_from_slice(&signs);
                        }
                    }
                    let witness: Vec<f64> =
                        best_signs.iter().zip(sides).map(|(z, v)| z * v).collect();
                    Ok(LossEval {
                        value: best,
                        witness: Some(witness),
                    })
                }
            }
        }
        SensitivitySpec::Hybrid { blocks } => {
            // The block set lives in the profile's own basis frame.
            let ranks: Vec<usize> = blocks.iter().map(|b| b.rank).collect();
            if ranks != profile.block_ranks() {
                return Err(Error::unsupported(
                    "hybrid loss requires profile blocks aligned with the clipping blocks",
                ));
            }
            let mut value = 0.0;
            let mut in_basis = vec![0.0; d];
            let mut start = 0;
            for (b, &s) in blocks.iter().zip(profile.block_sigmas()) {
                if s > 0.0 {
                    value += b.c2 * b.c2 / (s * s);
                } else {
                    value = f64::INFINITY;
                }
                in_basis[start] = b.c2;
                start += b.rank;
            }
            let witness = match profile.basis() {
                Some(bs) => bs.from_basis(&in_basis)?,
                None => in_basis,
            };
            Ok(LossEval {
                value,
                witness: Some(witness),
            })
        }
        SensitivitySpec::LpLinfMix { .. } => Err(Error::unsupported(
            "no closed-form loss for lp/linf mixtures; clip to a supported set first",
        )),
    }
}

/// Maximum ℓ2 norm over {‖s‖p ≤ cp, ‖s‖∞ ≤ cinf}, attained at the
/// dominating-sensitivity vertex.
pub fn max_l2_lp_linf(p: f64, cp: f64, cinf: f64, d: usize) -> Result<f64> {
    let ds = dominating_sensitivity(p, cp, cinf, d)?;
    Ok(ds.max_l2(cinf.min(cp)))
}

/// Isotropic profile for sign/permutation-invariant sets: σ = b0·max_l2 in
/// every direction, which meets the (α, ε) target exactly.
pub fn optimal_noise_symmetric(
    d: usize,
    max_l2: f64,
    alpha: u32,
    target_eps: f64,
) -> Result<NoiseProfile> {
    if d == 0 {
        return Err(Error::validation("dimension must be positive"));
    }
    if !(max_l2 > 0.0 && max_l2.is_finite()) {
        return Err(Error::validation("max_l2 must be positive"));
    }
    let b0 = calibration_scale(alpha, target_eps)?;
    NoiseProfile::isotropic(d, b0 * max_l2)
}

/// Optimal per-direction profile for an axis-aligned hypercube:
/// σ_l = b0·√(V_l·ΣV), with total variance b0²(ΣV)².
pub fn optimal_noise_hypercube(sides: &[f64], alpha: u32, target_eps: f64) -> Result<NoiseProfile> {
    crate::ensure_finite("sides", sides)?;
    if sides.is_empty() || sides.iter().any(|&v| v < 0.0) {
        return Err(Error::validation(
            "hypercube sides must be nonnegative and non-empty",
        ));
    }
    let total: f64 = sides.iter().sum();
    if total <= 0.0 {
        return Err(Error::validation("hypercube sides must not all be zero"));
    }
    let b0 = calibration_scale(alpha, target_eps)?;
    let sigmas = sides.iter().map(|&v| b0 * (v * total).sqrt()).collect();
    NoiseProfile::per_direction(sigmas)
}

/// Optimal per-block isotropic profile for hybrid ℓ2 clipping:
/// σ_j = b0·√(c2j·Σ_l c2l√r_l / √r_j), total variance b0²(Σ c2l√r_l)².
pub fn optimal_noise_hybrid(
    blocks: &[(usize, f64)],
    alpha: u32,
    target_eps: f64,
) -> Result<NoiseProfile> {
    if blocks.is_empty() {
        return Err(Error::validation("hybrid profile needs at least one block"));
    }
    for &(r, c) in blocks {
        if r == 0 {
            return Err(Error::validation("block ranks must be positive"));
        }
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::validation("block radii must be positive"));
        }
    }
    let b0 = calibration_scale(alpha, target_eps)?;
    let weighted: f64 = blocks.iter().map(|&(r, c)| c * (r as f64).sqrt()).sum();
    let ranks = blocks.iter().map(|&(r, _)| r).collect();
    let sigmas = blocks
        .iter()
        .map(|&(r, c)| b0 * (c * weighted / (r as f64).sqrt()).sqrt())
        .collect();
    NoiseProfile::per_block(ranks, sigmas, None)
}

/// One clipping block handed to the twice-sampling noise optimizer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwiceHybridBlock {
    pub rank: usize,
    pub c2: f64,
    /// Number of ℓ∞-saturated coordinates; cinf = c2/√d0.
    pub d0: usize,
}

impl TwiceHybridBlock {
    pub fn cinf(&self) -> f64 {
        self.c2 / (self.d0 as f64).sqrt()
    }

    fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::validation("block rank must be positive"));
        }
        if !(self.c2 > 0.0 && self.c2.is_finite()) {
            return Err(Error::validation("block c2 must be positive"));
        }
        if self.d0 == 0 || self.d0 > self.rank {
            return Err(Error::validation(format!(
                "block d0 = {} must lie in 1..=rank ({})",
                self.d0, self.rank
            )));
        }
        Ok(())
    }
}

/// Output of [`optimize_noise_twice_hybrid`], also the JSON report the CLI
/// emits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwiceHybridNoise {
    pub sigmas: Vec<f64>,
    pub total_variance: f64,
    /// Order at which the converted (ε, δ) bound binds.
    pub alpha_star: u32,
    pub achieved_eps: f64,
    /// Whether no single-block ±1% feasible perturbation improves the
    /// objective by more than 1e-6 relative.
    pub locally_optimal: bool,
}

/// ε̃ after T-fold composition and conversion for given per-block sigmas.
fn twice_hybrid_converted(
    q1: f64,
    q2: f64,
    blocks: &[TwiceHybridBlock],
    sigmas: &[f64],
    t: u64,
    delta: f64,
    alpha_grid: &[u32],
) -> Result<Conversion> {
    let triples: Vec<(f64, f64, usize)> = blocks
        .iter()
        .zip(sigmas)
        .map(|(b, &s)| (s, b.cinf(), b.d0))
        .collect();
    let max_alpha = *alpha_grid.iter().max().expect("non-empty grid");
    // eps0 is shared across orders; memoize it once per sigma vector.
    let mut eps0_table = vec![0.0; max_alpha as usize + 1];
    for v in 2..=max_alpha {
        eps0_table[v as usize] = coordinate_sampling_rdp_hybrid(v, q2, &triples)?;
    }
    let mut curve = RdpCurve::new();
    for &alpha in alpha_grid {
        let eps = twice_sampling_rdp(alpha, q1, |v| Ok(eps0_table[v as usize]))?;
        curve.insert(alpha, eps)?;
    }
    compose_and_convert(&curve, t, delta)
}

/// Minimizes Σ r_j σ_j² subject to the twice-sampling (ε̃, δ) constraint at
/// (T, δ, target): outer geometric bisection on a global scale, times cyclic
/// per-block coordinate descent with golden-section line search on the
/// allocation weights. The returned solution sits on the constraint within
/// 1e-4 relative slack.
pub fn optimize_noise_twice_hybrid(
    q1: f64,
    q2: f64,
    blocks: &[TwiceHybridBlock],
    t: u64,
    delta: f64,
    target_eps: f64,
    alpha_grid: &[u32],
) -> Result<TwiceHybridNoise> {
    if blocks.is_empty() {
        return Err(Error::validation("optimizer needs at least one block"));
    }
    for b in blocks {
        b.validate()?;
    }
    if alpha_grid.is_empty() {
        return Err(Error::validation("alpha grid must be non-empty"));
    }
    if !(target_eps > 0.0 && target_eps.is_finite()) {
        return Err(Error::validation("target epsilon must be positive"));
    }
    let m = blocks.len();

    // Smallest feasible global scale for a fixed allocation shape.
    let min_scale = |weights: &[f64]| -> Result<f64> {
        calibrate_sigma(
            |scale| {
                let sigmas: Vec<f64> = weights.iter().map(|w| w * scale).collect();
                Ok(twice_hybrid_converted(q1, q2, blocks, &sigmas, t, delta, alpha_grid)?.eps)
            },
            target_eps,
        )
    };
    let objective_of = |weights: &[f64], scale: f64| -> f64 {
        blocks
            .iter()
            .zip(weights)
            .map(|(b, w)| b.rank as f64 * (w * scale) * (w * scale))
            .sum()
    };

    // Start from the pure-Gaussian hybrid shape σ_j ∝ √(c2j/√r_j).
    let mut weights: Vec<f64> = blocks
        .iter()
        .map(|b| (b.c2 / (b.rank as f64).sqrt()).sqrt())
        .collect();
    let norm = weights.iter().cloned().fold(0.0_f64, f64::max);
    for w in &mut weights {
        *w /= norm;
    }

    let mut scale = min_scale(&weights)?;
    let mut best_obj = objective_of(&weights, scale);

    if m > 1 {
        const GOLDEN: f64 = 0.618_033_988_749_894_9;
        for _sweep in 0..24 {
            let sweep_start = best_obj;
            for j in 0..m {
                // Golden-section on ln w_j over a ±2.5x window.
                let center = weights[j].ln();
                let (mut lo, mut hi) = (center - 2.5_f64.ln(), center + 2.5_f64.ln());
                let eval = |wj: f64, weights: &mut Vec<f64>| -> Result<f64> {
                    weights[j] = wj.exp();
                    let s = min_scale(weights)?;
                    Ok(objective_of(weights, s))
                };
                let mut x1 = hi - GOLDEN * (hi - lo);
                let mut x2 = lo + GOLDEN * (hi - lo);
                let mut f1 = eval(x1, &mut weights)?;
                let mut f2 = eval(x2, &mut weights)?;
                for _ in 0..20 {
                    if f1 <= f2 {
                        hi = x2;
                        x2 = x1;
                        f2 = f1;
                        x1 = hi - GOLDEN * (hi - lo);
                        f1 = eval(x1, &mut weights)?;
                    } else {
                        lo = x1;
                        x1 = x2;
                        f1 = f2;
                        x2 = lo + GOLDEN * (hi - lo);
                        f2 = eval(x2, &mut weights)?;
                    }
                }
                let (wj, fj) = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
                weights[j] = wj.exp();
                best_obj = fj;
            }
            if sweep_start - best_obj <= 1e-6 * sweep_start {
                break;
            }
        }
        scale = min_scale(&weights)?;
        best_obj = objective_of(&weights, scale);
    }

    let sigmas: Vec<f64> = weights.iter().map(|w| w * scale).collect();
    let conv = twice_hybrid_converted(q1, q2, blocks, &sigmas, t, delta, alpha_grid)?;
    if conv.eps > target_eps * (1.0 + 1e-4) {
        return Err(Error::numeric(format!(
            "optimizer left the constraint violated: {} > {target_eps}",
            conv.eps
        )));
    }

    // Local-optimality certificate: single-block ±1% moves that stay
    // feasible must not beat the objective by more than 1e-6 relative.
    let mut locally_optimal = true;
    for j in 0..m {
        for factor in [1.01, 0.99] {
            let mut perturbed = sigmas.clone();
            perturbed[j] *= factor;
            let c = twice_hybrid_converted(q1, q2, blocks, &perturbed, t, delta, alpha_grid)?;
            if c.eps <= target_eps {
                let obj: f64 = blocks
                    .iter()
                    .zip(&perturbed)
                    .map(|(b, s)| b.rank as f64 * s * s)
                    .sum();
                if obj < best_obj * (1.0 - 1e-6) {
                    locally_optimal = false;
                }
            }
        }
    }

    Ok(TwiceHybridNoise {
        total_variance: best_obj,
        sigmas,
        alpha_star: conv.alpha_star,
        achieved_eps: conv.eps,
        locally_optimal,
    })
}

/// Calibration report for one mechanism: σ values meeting the (T, δ, ε)
/// target and the resulting total noise variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub sigmas: Vec<f64>,
    pub total_variance: f64,
    pub alpha_star: u32,
    pub achieved_eps: f64,
}

/// Scales a mechanism's noise until its composed-and-converted ε meets the
/// target and reports the resulting total variance. Hybrid pure-Gaussian
/// specs start from the closed-form optimal per-block shape, so only the
/// scale remains free.
pub fn calibrated_variance(
    spec: &MechanismSpec,
    t: u64,
    delta: f64,
    target_eps: f64,
    alpha_grid: &[u32],
) -> Result<CalibrationReport> {
    spec.validate()?;
    let base = match (&spec.kind, &spec.sensitivity) {
        (MechanismKind::PureGaussian, SensitivitySpec::Hybrid { blocks }) => {
            let pairs: Vec<(usize, f64)> = blocks.iter().map(|b| (b.rank, b.c2)).collect();
            let profile = optimal_noise_hybrid(&pairs, 2, 1.0)?;
            let mut shaped = spec.clone();
            shaped.noise = NoiseScale::PerBlock(profile.block_sigmas().to_vec());
            shaped
        }
        _ => spec.clone(),
    };
    let scale = calibrate_sigma(
        |s| {
            Ok(base
                .with_noise_scaled(s)
                .converted_eps(alpha_grid, t, delta)?
                .eps)
        },
        target_eps,
    )?;
    let calibrated = base.with_noise_scaled(scale);
    let conv = calibrated.converted_eps(alpha_grid, t, delta)?;
    let (sigmas, total_variance) = match &calibrated.noise {
        NoiseScale::Scalar(s) => (vec![*s], *s * *s * calibrated.dim as f64),
        NoiseScale::PerBlock(sigmas) => {
            let ranks: Vec<usize> = match &calibrated.sensitivity {
                SensitivitySpec::Hybrid { blocks } => blocks.iter().map(|b| b.rank).collect(),
                _ => unreachable!("validated: per-block noise implies hybrid"),
            };
            let var = ranks
                .iter()
                .zip(sigmas)
                .map(|(&r, &s)| r as f64 * s * s)
                .sum();
            (sigmas.clone(), var)
        }
    };
    Ok(CalibrationReport {
        sigmas,
        total_variance,
        alpha_star: conv.alpha_star,
        achieved_eps: conv.eps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::rel_diff;
    use crate::rdp::{gaussian_rdp, SamplingPlan};

    #[test]
    fn loss_l2_ball_isotropic() {
        let profile = NoiseProfile::isotropic(5, 2.0).unwrap();
        let eval = privacy_loss(&profile, &SensitivitySpec::L2Ball { c2: 3.0 }).unwrap();
        assert!((eval.value - 2.25).abs() < 1e-12);
        let w = eval.witness.unwrap();
        assert!((loss_of_vector(&profile, &w).unwrap() - eval.value).abs() < 1e-9);
    }

    #[test]
    fn loss_aligned_hypercube() {
        let profile = NoiseProfile::per_direction(vec![1.0, 1.0]).unwrap();
        let set = SensitivitySpec::Hypercube {
            sides: vec![1.0, 2.0],
        };
        let eval = privacy_loss(&profile, &set).unwrap();
        assert!((eval.value - 5.0).abs() < 1e-12);
        let w = eval.witness.unwrap();
        assert_eq!(
            w.iter().map(|x| x.abs()).collect::<Vec<_>>(),
            vec![1.0, 2.0]
        );
    }

    #[test]
    fn loss_rotated_square_isotropic_invariant() {
        // Rotating a square under isotropic noise leaves the loss at 2.
        let c = std::f64::consts::FRAC_1_SQRT_2;
        let m = nalgebra::DMatrix::from_column_slice(2, 2, &[c, c, -c, c]);
        let basis = OrthoBasis::new(m, vec![1, 1]).unwrap();
        let profile = NoiseProfile::per_direction(vec![1.0, 1.0])
            .unwrap()
            .with_basis(basis)
            .unwrap();
        let set = SensitivitySpec::Hypercube {
            sides: vec![1.0, 1.0],
        };
        let eval = privacy_loss(&profile, &set).unwrap();
        assert!((eval.value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn loss_hybrid_closed_form() {
        let profile = NoiseProfile::per_block(vec![2, 3], vec![0.5, 2.0], None).unwrap();
        let set = SensitivitySpec::Hybrid {
            blocks: vec![
                crate::sensitivity::SubspaceClip::l2_only(2, 1.0),
                crate::sensitivity::SubspaceClip::l2_only(3, 4.0),
            ],
        };
        let eval = privacy_loss(&profile, &set).unwrap();
        assert!((eval.value - (4.0 + 4.0)).abs() < 1e-12);
        let w = eval.witness.unwrap();
        assert!((loss_of_vector(&profile, &w).unwrap() - eval.value).abs() < 1e-9);
    }

    #[test]
    fn loss_unsupported_combination() {
        let profile = NoiseProfile::isotropic(3, 1.0).unwrap();
        let set = SensitivitySpec::LpLinfMix {
            p: 2.0,
            cp: 1.0,
            cinf: 0.5,
        };
        assert!(matches!(
            privacy_loss(&profile, &set),
            Err(Error::Unsupported(_))
        ));

        let big = SensitivitySpec::Hypercube {
            sides: vec![1.0; 25],
        };
        let rot = crate::subspace::OrthoBasis::identity(25, vec![25]).unwrap();
        let p25 = NoiseProfile::isotropic(25, 1.0)
            .unwrap()
            .with_basis(rot)
            .unwrap();
        assert!(matches!(
            privacy_loss(&p25, &big),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn max_l2_examples() {
        assert!((max_l2_lp_linf(2.0, 1.0, 2.0, 8).unwrap() - 1.0).abs() < 1e-15);
        assert!((max_l2_lp_linf(2.0, 1.0, 0.1, 10_000).unwrap() - 1.0).abs() < 1e-12);
        let v = max_l2_lp_linf(1.0, 1.0, 0.3, 10).unwrap();
        assert!((v - (3.0_f64 * 0.09 + 0.01).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn symmetric_profile_meets_target() {
        let profile = optimal_noise_symmetric(4, 1.0, 2, 1.0).unwrap();
        assert!((profile.block_sigmas()[0] - 1.0).abs() < 1e-15);
        assert!((profile.total_variance() - 4.0).abs() < 1e-12);
        // b0 identity: the Gaussian divergence at the witness reproduces eps.
        let eps = gaussian_rdp(2, 1.0, profile.block_sigmas()[0]).unwrap();
        assert!(rel_diff(eps, 1.0) < 1e-10);

        let doubled = optimal_noise_symmetric(4, 2.0, 2, 1.0).unwrap();
        assert!((doubled.block_sigmas()[0] - 2.0 * profile.block_sigmas()[0]).abs() < 1e-12);

        let one_d = optimal_noise_symmetric(1, 1.5, 4, 0.5).unwrap();
        let b0 = calibration_scale(4, 0.5).unwrap();
        assert!((one_d.block_sigmas()[0] - b0 * 1.5).abs() < 1e-12);
    }

    #[test]
    fn hypercube_profile_examples() {
        let b0 = calibration_scale(2, 1.0).unwrap();

        let p = optimal_noise_hypercube(&[1.0, 0.0, 0.0], 2, 1.0).unwrap();
        assert!((p.block_sigmas()[0] - b0).abs() < 1e-12);
        assert_eq!(p.block_sigmas()[1], 0.0);
        assert!((p.total_variance() - b0 * b0).abs() < 1e-12);

        // All-ones cube matches the isotropic answer for the same set.
        let d = 6;
        let p = optimal_noise_hypercube(&vec![1.0; d], 2, 1.0).unwrap();
        for &s in p.block_sigmas() {
            assert!((s - b0 * (d as f64).sqrt()).abs() < 1e-12);
        }
        assert!((p.total_variance() - b0 * b0 * (d * d) as f64).abs() < 1e-9);

        let p = optimal_noise_hypercube(&[3.0, 1.0], 2, 1.0).unwrap();
        assert!((p.block_sigmas()[0] - b0 * 12.0_f64.sqrt()).abs() < 1e-12);
        assert!((p.block_sigmas()[1] - b0 * 2.0).abs() < 1e-12);
        assert!((p.total_variance() - b0 * b0 * 16.0).abs() < 1e-12);

        // Loss at the optimal profile equals 1/b0^2 = 2 eps / alpha.
        let eval = privacy_loss(
            &p,
            &SensitivitySpec::Hypercube {
                sides: vec![3.0, 1.0],
            },
        )
        .unwrap();
        assert!(rel_diff(eval.value, 1.0 / (b0 * b0)) < 1e-12);

        assert!(optimal_noise_hypercube(&[0.0, 0.0], 2, 1.0).is_err());
    }

    #[test]
    fn hybrid_profile_examples() {
        let b0 = calibration_scale(2, 1.0).unwrap();
        let p = optimal_noise_hybrid(&[(4, 1.5)], 2, 1.0).unwrap();
        assert!((p.block_sigmas()[0] - b0 * 1.5).abs() < 1e-12);
        assert!((p.total_variance() - b0 * b0 * 1.5 * 1.5 * 4.0).abs() < 1e-12);

        // The worked ratio: hybrid blocks vs the isotropic ball of the same
        // global budget is about 5.5x cheaper.
        let hybrid = optimal_noise_hybrid(&[(1000, 2.5), (290_898, 1.0)], 2, 1.0).unwrap();
        let iso = optimal_noise_symmetric(291_898, 7.25_f64.sqrt(), 2, 1.0).unwrap();
        let ratio = iso.total_variance() / hybrid.total_variance();
        assert!((ratio - 5.5).abs() < 0.1, "ratio {ratio}");
    }

    #[test]
    fn hybrid_composition_gap_factor() {
        // Equal ranks: composition costs m * d * ||c||_2^2-style variance,
        // the weighted-average bound costs d * ||c||_1^2 / m.
        let m = 4;
        let r = 25;
        let c = [1.7, 0.4, 2.2, 0.9];
        let blocks: Vec<(usize, f64)> = c.iter().map(|&ci| (r, ci)).collect();
        let p = optimal_noise_hybrid(&blocks, 2, 1.0).unwrap();
        let b0 = calibration_scale(2, 1.0).unwrap();
        let l1: f64 = c.iter().sum();
        let l2sq: f64 = c.iter().map(|x| x * x).sum();
        assert!(rel_diff(p.total_variance(), b0 * b0 * r as f64 * l1 * l1) < 1e-12);
        // Composition baseline at matched per-block budgets.
        let composition = b0 * b0 * (m * m * r) as f64 * l2sq / m as f64;
        let predicted_gap = m as f64 * l2sq / (l1 * l1);
        assert!(rel_diff(composition / p.total_variance(), predicted_gap) < 1e-12);
    }

    #[test]
    fn optimizer_single_block_matches_calibration() {
        let grid: Vec<u32> = (2..=64).collect();
        let blocks = [TwiceHybridBlock {
            rank: 32,
            c2: 1.0,
            d0: 16,
        }];
        let out = optimize_noise_twice_hybrid(0.05, 0.5, &blocks, 100, 1e-5, 2.0, &grid).unwrap();

        let spec = MechanismSpec {
            kind: MechanismKind::TwiceSampled,
            plan: SamplingPlan { q1: 0.05, q2: 0.5 },
            dim: 32,
            sensitivity: SensitivitySpec::LpLinfMix {
                p: 2.0,
                cp: 1.0,
                cinf: 0.25,
            },
            noise: NoiseScale::Scalar(1.0),
        };
        let sigma = calibrate_sigma(
            |s| {
                Ok(spec
                    .with_noise_scaled(s)
                    .converted_eps(&grid, 100, 1e-5)?
                    .eps)
            },
            2.0,
        )
        .unwrap();
        assert!(
            rel_diff(out.sigmas[0], sigma) < 1e-4,
            "{} vs {sigma}",
            out.sigmas[0]
        );
        assert!(out.locally_optimal);
        assert!(out.achieved_eps <= 2.0 * (1.0 + 1e-4));
    }

    #[test]
    fn optimizer_pure_gaussian_reduction() {
        // q1 = q2 = 1, d0 = 1: the mechanism is a pure Gaussian at
        // sensitivity c2, so sigma = c2 * sqrt(alpha*/(2 eps(alpha*))) for
        // the conversion-optimal order.
        let grid: Vec<u32> = (2..=128).collect();
        let blocks = [TwiceHybridBlock {
            rank: 8,
            c2: 1.0,
            d0: 1,
        }];
        let out = optimize_noise_twice_hybrid(1.0, 1.0, &blocks, 1, 1e-5, 1.0, &grid).unwrap();
        let alpha = out.alpha_star as f64;
        let log_delta: f64 = (1e-5_f64).ln();
        // Solve T eps(alpha) - log(delta)/(alpha-1) = target for sigma.
        let per_step = 1.0 + log_delta / (alpha - 1.0);
        let sigma_expect = (alpha / (2.0 * per_step)).sqrt();
        assert!(
            rel_diff(out.sigmas[0], sigma_expect) < 1e-4,
            "{} vs {sigma_expect}",
            out.sigmas[0]
        );
    }

    #[test]
    fn optimizer_scale_equivariance() {
        let grid: Vec<u32> = (2..=48).collect();
        let blocks = vec![
            TwiceHybridBlock {
                rank: 16,
                c2: 1.2,
                d0: 4,
            },
            TwiceHybridBlock {
                rank: 48,
                c2: 0.6,
                d0: 9,
            },
        ];
        let doubled: Vec<TwiceHybridBlock> = blocks
            .iter()
            .map(|b| TwiceHybridBlock {
                rank: b.rank,
                c2: 2.0 * b.c2,
                d0: b.d0,
            })
            .collect();
        let a = optimize_noise_twice_hybrid(0.1, 0.5, &blocks, 50, 1e-5, 3.0, &grid).unwrap();
        let b = optimize_noise_twice_hybrid(0.1, 0.5, &doubled, 50, 1e-5, 3.0, &grid).unwrap();
        for (sa, sb) in a.sigmas.iter().zip(&b.sigmas) {
            assert!(rel_diff(2.0 * sa, *sb) < 2e-3, "{sa} vs {sb}");
        }
        assert!(a.locally_optimal && b.locally_optimal);
    }

    #[test]
    fn optimizer_beats_single_block_baseline() {
        let grid: Vec<u32> = (2..=64).collect();
        let blocks = vec![
            TwiceHybridBlock {
                rank: 10,
                c2: 2.0,
                d0: 4,
            },
            TwiceHybridBlock {
                rank: 90,
                c2: 0.5,
                d0: 25,
            },
        ];
        let out = optimize_noise_twice_hybrid(0.05, 0.5, &blocks, 200, 1e-5, 4.0, &grid).unwrap();

        // Baseline ignoring block structure: one flat sigma over all 100
        // coordinates, with the lumped l2/linf budget.
        let c2_total = (4.0_f64 + 0.25).sqrt();
        let cinf = blocks.iter().map(|b| b.cinf()).fold(0.0_f64, f64::max);
        let spec = MechanismSpec {
            kind: MechanismKind::TwiceSampled,
            plan: SamplingPlan { q1: 0.05, q2: 0.5 },
            dim: 100,
            sensitivity: SensitivitySpec::LpLinfMix {
                p: 2.0,
                cp: c2_total,
                cinf,
            },
            noise: NoiseScale::Scalar(1.0),
        };
        let report = calibrated_variance(&spec, 200, 1e-5, 4.0, &grid).unwrap();
        assert!(
            out.total_variance <= report.total_variance * (1.0 + 1e-9),
            "optimizer {} vs baseline {}",
            out.total_variance,
            report.total_variance
        );
    }

    #[test]
    fn calibrated_variance_identical_specs_ratio_one() {
        let grid: Vec<u32> = (2..=64).collect();
        let spec = MechanismSpec {
            kind: MechanismKind::InputSampled,
            plan: SamplingPlan { q1: 0.02, q2: 1.0 },
            dim: 50,
            sensitivity: SensitivitySpec::L2Ball { c2: 1.0 },
            noise: NoiseScale::Scalar(1.0),
        };
        let a = calibrated_variance(&spec, 100, 1e-5, 3.0, &grid).unwrap();
        let b = calibrated_variance(&spec, 100, 1e-5, 3.0, &grid).unwrap();
        assert_eq!(a, b);
        assert!(a.achieved_eps <= 3.0);
    }
}
