//! Closed-form Rényi-DP accounting for the Gaussian mechanism under pure,
//! input-wise, coordinate-wise, and twice Poisson sampling, plus composition,
//! (ε, δ) conversion and σ calibration.
//!
//! All orders are integers α ≥ 2. Binomial sums are evaluated either through
//! an exact small-sum path (expm1/log1p on the excess over the plain binomial
//! identity, which keeps full relative precision when ε is tiny) or through
//! log-sum-exp when any term is large; exponents up to several hundred nats
//! are routine and never overflow.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::numeric::{ln_binomial, log_sum_exp, mul0};
use crate::sensitivity::{dominating_sensitivity, SensitivitySpec};
use crate::{Error, Result};

/// Beyond this log-magnitude the small-sum path would overflow; log-sum-exp
/// takes over (relative precision is then free since ln S is large).
const SMALL_SUM_LIMIT: f64 = 500.0;

/// Default integer order grid for conversion, 2..=256.
pub fn default_alpha_grid() -> Vec<u32> {
    (2..=256).collect()
}

fn check_order(alpha: u32) -> Result<()> {
    if alpha < 2 {
        return Err(Error::validation(format!(
            "order must be >= 2, got {alpha}"
        )));
    }
    Ok(())
}

fn check_rate(name: &str, q: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&q) || !q.is_finite() {
        return Err(Error::validation(format!(
            "{name} must lie in [0, 1], got {q}"
        )));
    }
    Ok(())
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::validation(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    Ok(())
}

/// ln C(α,v) + (α−v)·ln(1−q) + v·ln q, with zero coefficients killing
/// infinite logs at q ∈ {0, 1}.
fn ln_weight(alpha: u32, v: u32, ln_q: f64, ln_1mq: f64) -> f64 {
    ln_binomial(alpha as u64, v as u64) + mul0((alpha - v) as f64, ln_1mq) + mul0(v as f64, ln_q)
}

/// ln of S(α, q, g) = (1−q)^α + Σ_{v=1}^{α} C(α,v) (1−q)^{α−v} q^v e^{g(v)}
/// where g(1) = 0 and g(v) ≥ 0. `exponents[i]` holds g(v = i + 2).
///
/// Because the g ≡ 0 sum collapses to 1, the small regime accumulates
/// S − 1 = Σ_{v≥2} w_v (e^{g(v)} − 1) term by term; every summand is
/// nonnegative, so no cancellation occurs and ln1p keeps full precision.
pub(crate) fn log_binomial_amplified_sum(alpha: u32, q: f64, exponents: &[f64]) -> f64 {
    debug_assert_eq!(exponents.len(), alpha as usize - 1);
    if q == 0.0 {
        return 0.0;
    }
    let ln_q = q.ln();
    let ln_1mq = (-q).ln_1p();

    let mut max_term = f64::NEG_INFINITY;
    for v in 2..=alpha {
        let t = ln_weight(alpha, v, ln_q, ln_1mq) + exponents[(v - 2) as usize];
        max_term = max_term.max(t);
    }

    if max_term < SMALL_SUM_LIMIT {
        let mut excess = 0.0;
        for v in 2..=alpha {
            let lw = ln_weight(alpha, v, ln_q, ln_1mq);
            let g = exponents[(v - 2) as usize];
            excess += (lw + g).exp() - lw.exp();
        }
        excess.ln_1p()
    } else {
        let mut terms = Vec::with_capacity(alpha as usize + 1);
        terms.push(mul0(alpha as f64, ln_1mq));
        terms.push(ln_weight(alpha, 1, ln_q, ln_1mq));
        for v in 2..=alpha {
            terms.push(ln_weight(alpha, v, ln_q, ln_1mq) + exponents[(v - 2) as usize]);
        }
        log_sum_exp(&terms)
    }
}

/// ln S for the coordinate-sampling bound at one coordinate of sensitivity
/// `s`: exponents g(v) = v(v−1)s²/(2σ²).
fn coordinate_log_sum(alpha: u32, q: f64, s: f64, sigma: f64) -> f64 {
    let rate = s * s / (2.0 * sigma * sigma);
    let exponents: Vec<f64> = (2..=alpha)
        .map(|v| (v as f64) * (v as f64 - 1.0) * rate)
        .collect();
    log_binomial_amplified_sum(alpha, q, &exponents)
}

/// RDP of the pure Gaussian mechanism at ℓ2 sensitivity `delta2`:
/// ε(α) = α·delta2²/(2σ²).
pub fn gaussian_rdp(alpha: u32, delta2: f64, sigma: f64) -> Result<f64> {
    check_order(alpha)?;
    check_sigma(sigma)?;
    if !(delta2 >= 0.0 && delta2.is_finite()) {
        return Err(Error::validation(format!(
            "sensitivity must be nonnegative, got {delta2}"
        )));
    }
    Ok(alpha as f64 * delta2 * delta2 / (2.0 * sigma * sigma))
}

/// One-dimensional Poisson-subsampled Gaussian RDP with the two leading
/// binomial terms collapsed:
///
/// ε(α) = log[(1−q)^{α−1}(αq−q+1) + Σ_{v=2}^{α} C(α,v)(1−q)^{α−v} q^v
///        e^{v(v−1)s²/(2σ²)}] / (α−1).
///
/// This is a deliberately separate evaluation path from
/// [`coordinate_sampling_rdp`]'s expanded grouping; the two must agree to
/// 1e-12 relative and the test suites hold them to that.
pub fn subsampled_gaussian_rdp_1d(alpha: u32, q: f64, s: f64, sigma: f64) -> Result<f64> {
    check_order(alpha)?;
    check_rate("q", q)?;
    check_sigma(sigma)?;
    if !(s >= 0.0 && s.is_finite()) {
        return Err(Error::validation(format!(
            "sensitivity must be nonnegative, got {s}"
        )));
    }
    if q == 0.0 {
        return Ok(0.0);
    }
    let am1 = alpha as f64 - 1.0;
    let ln_q = q.ln();
    let ln_1mq = (-q).ln_1p();
    let rate = s * s / (2.0 * sigma * sigma);
    // ln[(1−q)^{α−1}(1 + (α−1)q)], the two leading binomial terms combined.
    let lead = mul0(am1, ln_1mq) + (am1 * q).ln_1p();

    let mut max_term = lead;
    for v in 2..=alpha {
        let t = ln_weight(alpha, v, ln_q, ln_1mq) + (v as f64) * (v as f64 - 1.0) * rate;
        max_term = max_term.max(t);
    }

    let log_sum = if max_term < SMALL_SUM_LIMIT {
        let mut excess = libm::expm1(lead);
        for v in 2..=alpha {
            excess +=
                (ln_weight(alpha, v, ln_q, ln_1mq) + (v as f64) * (v as f64 - 1.0) * rate).exp();
        }
        excess.ln_1p()
    } else {
        let mut terms = Vec::with_capacity(alpha as usize);
        terms.push(lead);
        for v in 2..=alpha {
            terms.push(ln_weight(alpha, v, ln_q, ln_1mq) + (v as f64) * (v as f64 - 1.0) * rate);
        }
        log_sum_exp(&terms)
    };
    Ok((log_sum / am1).max(0.0))
}

/// Coordinate-wise Poisson sampling bound: d0 saturated coordinates at cinf
/// plus, when the ℓp budget leaves a remainder, one extra coordinate at
/// c_rem:
///
/// ε(α) = d0 · ε₁(cinf) + 1{c_rem > 0} · ε₁(c_rem),
///
/// where ε₁ is the expanded per-coordinate form
/// log[(1−q)^α + Σ_{v=1}^{α} C(α,v)(1−q)^{α−v} q^v e^{v(v−1)s²/(2σ²)}]/(α−1).
pub fn coordinate_sampling_rdp(
    alpha: u32,
    q: f64,
    d0: usize,
    c_rem: f64,
    cinf: f64,
    sigma: f64,
) -> Result<f64> {
    check_order(alpha)?;
    check_rate("q", q)?;
    check_sigma(sigma)?;
    if d0 == 0 {
        return Err(Error::validation("d0 must be positive"));
    }
    if !(cinf >= 0.0 && cinf.is_finite()) || !(c_rem >= 0.0 && c_rem.is_finite()) {
        return Err(Error::validation("sensitivities must be nonnegative"));
    }
    let am1 = alpha as f64 - 1.0;
    let mut eps = d0 as f64 * coordinate_log_sum(alpha, q, cinf, sigma) / am1;
    if c_rem > 0.0 {
        eps += coordinate_log_sum(alpha, q, c_rem, sigma) / am1;
    }
    Ok(eps)
}

/// Per-block coordinate-sampling bound used inside the twice-sampling noise
/// optimization: Σ_j d0j · ε₁(cinf_j, σ_j).
pub fn coordinate_sampling_rdp_hybrid(
    alpha: u32,
    q2: f64,
    blocks: &[(f64, f64, usize)],
) -> Result<f64> {
    check_order(alpha)?;
    check_rate("q2", q2)?;
    if blocks.is_empty() {
        return Err(Error::validation("hybrid bound needs at least one block"));
    }
    let am1 = alpha as f64 - 1.0;
    let mut eps = 0.0;
    for &(sigma, cinf, d0) in blocks {
        check_sigma(sigma)?;
        if d0 == 0 {
            return Err(Error::validation("block d0 must be positive"));
        }
        if !(cinf >= 0.0 && cinf.is_finite()) {
            return Err(Error::validation("block cinf must be nonnegative"));
        }
        eps += d0 as f64 * coordinate_log_sum(alpha, q2, cinf, sigma) / am1;
    }
    Ok(eps)
}

/// Twice-sampling amplification: given the coordinate-sampled mechanism's
/// curve ε₀(v) for v = 2..α,
///
/// ε(α) = log[(1−q₁)^α + Σ_{v=1}^{α} C(α,v)(1−q₁)^{α−v} q₁^v
///        e^{(v−1)ε₀(v)}] / (α−1).
///
/// ε₀(1) is never evaluated (its exponent carries a zero factor).
pub fn twice_sampling_rdp<F>(alpha: u32, q1: f64, eps0: F) -> Result<f64>
where
    F: Fn(u32) -> Result<f64>,
{
    check_order(alpha)?;
    check_rate("q1", q1)?;
    if q1 == 0.0 {
        return Ok(0.0);
    }
    let mut exponents = Vec::with_capacity(alpha as usize - 1);
    for v in 2..=alpha {
        let e0 = eps0(v)?;
        if !(e0 >= 0.0) {
            return Err(Error::validation(format!(
                "eps0({v}) must be nonnegative, got {e0}"
            )));
        }
        exponents.push((v as f64 - 1.0) * e0);
    }
    let log_sum = log_binomial_amplified_sum(alpha, q1, &exponents);
    Ok(log_sum / (alpha as f64 - 1.0))
}

/// Large-d0 limit of the coordinate-sampling bound: ε(α) = α q² τ with
/// τ = (c_p / (√2 σ))².
pub fn asymptotic_coordinate_limit(alpha: u32, q: f64, tau: f64) -> Result<f64> {
    check_order(alpha)?;
    check_rate("q", q)?;
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(Error::validation("tau must be nonnegative"));
    }
    Ok(alpha as f64 * q * q * tau)
}

/// Large-d0 limit of the twice-sampling bound:
/// ε(α) = log[(1−q₁)^α + Σ_{v=1}^{α} C(α,v)(1−q₁)^{α−v} q₁^v
///        e^{v(v−1)q₂²τ}] / (α−1).
pub fn asymptotic_twice(alpha: u32, q1: f64, q2: f64, tau: f64) -> Result<f64> {
    check_order(alpha)?;
    check_rate("q1", q1)?;
    check_rate("q2", q2)?;
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(Error::validation("tau must be nonnegative"));
    }
    let rate = q2 * q2 * tau;
    let exponents: Vec<f64> = (2..=alpha)
        .map(|v| (v as f64) * (v as f64 - 1.0) * rate)
        .collect();
    Ok(log_binomial_amplified_sum(alpha, q1, &exponents) / (alpha as f64 - 1.0))
}

/// Map from integer order α ≥ 2 to ε(α) in nats.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RdpCurve {
    entries: BTreeMap<u32, f64>,
}

impl RdpCurve {
    pub fn new() -> Self {
        RdpCurve {
            entries: BTreeMap::new(),
        }
    }

    pub fn from_entries<I: IntoIterator<Item = (u32, f64)>>(entries: I) -> Result<Self> {
        let mut curve = RdpCurve::new();
        for (alpha, eps) in entries {
            curve.insert(alpha, eps)?;
        }
        if curve.entries.is_empty() {
            return Err(Error::validation("RDP curve needs at least one entry"));
        }
        Ok(curve)
    }

    pub fn insert(&mut self, alpha: u32, eps: f64) -> Result<()> {
        check_order(alpha)?;
        if eps.is_nan() || eps < 0.0 {
            return Err(Error::validation(format!(
                "eps({alpha}) must be nonnegative, got {eps}"
            )));
        }
        self.entries.insert(alpha, eps);
        Ok(())
    }

    pub fn get(&self, alpha: u32) -> Option<f64> {
        self.entries.get(&alpha).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.entries.iter().map(|(&a, &e)| (a, e))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl Default for RdpCurve {
    fn default() -> Self {
        Self::new()
    }
}

/// Result of converting a composed curve to (ε, δ)-DP.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conversion {
    pub eps: f64,
    pub alpha_star: u32,
}

/// T-fold composition followed by conversion: minimizes
/// T·ε(α) − log(δ)/(α−1) over the curve's orders.
pub fn compose_and_convert(curve: &RdpCurve, t: u64, delta: f64) -> Result<Conversion> {
    if curve.is_empty() {
        return Err(Error::validation("cannot convert an empty RDP curve"));
    }
    if t == 0 {
        return Err(Error::validation("composition count must be positive"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::validation(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    let log_delta = delta.ln();
    let mut best: Option<Conversion> = None;
    for (alpha, eps) in curve.iter() {
        let candidate = t as f64 * eps - log_delta / (alpha as f64 - 1.0);
        if best.is_none_or(|b| candidate < b.eps) {
            best = Some(Conversion {
                eps: candidate,
                alpha_star: alpha,
            });
        }
    }
    Ok(best.expect("non-empty curve"))
}

/// Poisson sampling plan: input-wise rate q1 and coordinate-wise rate q2.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub q1: f64,
    pub q2: f64,
}

impl SamplingPlan {
    pub fn new(q1: f64, q2: f64) -> Result<Self> {
        check_rate("q1", q1)?;
        check_rate("q2", q2)?;
        Ok(SamplingPlan { q1, q2 })
    }

    /// Marginal per-coordinate inclusion rate q1·q2.
    pub fn effective_rate(&self) -> f64 {
        self.q1 * self.q2
    }
}

/// Which randomization the mechanism applies before adding Gaussian noise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MechanismKind {
    PureGaussian,
    InputSampled,
    CoordinateSampled,
    TwiceSampled,
}

/// Noise magnitude attached to a mechanism: one σ for every coordinate, or
/// one σ per hybrid block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", untagged)]
pub enum NoiseScale {
    Scalar(f64),
    PerBlock(Vec<f64>),
}

impl NoiseScale {
    fn scaled(&self, factor: f64) -> NoiseScale {
        match self {
            NoiseScale::Scalar(s) => NoiseScale::Scalar(s * factor),
            NoiseScale::PerBlock(v) => NoiseScale::PerBlock(v.iter().map(|s| s * factor).collect()),
        }
    }
}

/// Fully-specified mechanism: sampling mode and plan, sensitivity set,
/// ambient dimension, and noise scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MechanismSpec {
    pub kind: MechanismKind,
    pub plan: SamplingPlan,
    pub dim: usize,
    pub sensitivity: SensitivitySpec,
    pub noise: NoiseScale,
}

impl MechanismSpec {
    pub fn validate(&self) -> Result<()> {
        self.sensitivity.validate()?;
        check_rate("q1", self.plan.q1)?;
        check_rate("q2", self.plan.q2)?;
        if self.dim == 0 {
            return Err(Error::validation("dimension must be positive"));
        }
        if let Some(d) = self.sensitivity.dim() {
            if d != self.dim {
                return Err(Error::validation(format!(
                    "sensitivity spec dimension {d} != declared dim {}",
                    self.dim
                )));
            }
        }
        match &self.noise {
            NoiseScale::Scalar(s) => check_sigma(*s)?,
            NoiseScale::PerBlock(sigmas) => {
                for &s in sigmas {
                    check_sigma(s)?;
                }
                match &self.sensitivity {
                    SensitivitySpec::Hybrid { blocks } if blocks.len() == sigmas.len() => {}
                    _ => {
                        return Err(Error::validation(
                            "per-block noise requires a hybrid sensitivity with matching blocks",
                        ))
                    }
                }
            }
        }
        Ok(())
    }

    /// A copy with every σ multiplied by `factor`; calibration sweeps this.
    pub fn with_noise_scaled(&self, factor: f64) -> MechanismSpec {
        let mut out = self.clone();
        out.noise = self.noise.scaled(factor);
        out
    }

    fn scalar_sigma(&self) -> Result<f64> {
        match &self.noise {
            NoiseScale::Scalar(s) => Ok(*s),
            NoiseScale::PerBlock(_) => Err(Error::unsupported(
                "this mechanism mode requires a scalar sigma",
            )),
        }
    }

    /// Worst-case ℓ2 magnitude of the sensitivity set.
    pub fn max_l2(&self) -> Result<f64> {
        match &self.sensitivity {
            SensitivitySpec::L2Ball { c2 } => Ok(*c2),
            SensitivitySpec::LpLinfMix { p, cp, cinf } => {
                let ds = dominating_sensitivity(*p, *cp, *cinf, self.dim)?;
                Ok(ds.max_l2(cinf.min(*cp)))
            }
            SensitivitySpec::Hypercube { sides } => {
                Ok(sides.iter().map(|v| v * v).sum::<f64>().sqrt())
            }
            SensitivitySpec::Hybrid { blocks } => {
                Ok(blocks.iter().map(|b| b.c2 * b.c2).sum::<f64>().sqrt())
            }
        }
    }

    /// The (cinf, d0, c_rem) triple the coordinate-sampling bound needs.
    fn coordinate_budget(&self) -> Result<(f64, usize, f64)> {
        match &self.sensitivity {
            SensitivitySpec::L2Ball { c2 } => Ok((*c2, 1, 0.0)),
            SensitivitySpec::LpLinfMix { p, cp, cinf } => {
                let eff_cinf = cinf.min(*cp);
                let ds = dominating_sensitivity(*p, *cp, *cinf, self.dim)?;
                Ok((eff_cinf, ds.d0, ds.c_rem))
            }
            _ => Err(Error::unsupported(
                "coordinate accounting needs an l2 ball or lp/linf mixture; \
                 use per-block noise for hybrid specs",
            )),
        }
    }

    fn hybrid_blocks(&self) -> Result<Vec<(f64, f64, usize)>> {
        let (blocks, sigmas) = match (&self.sensitivity, &self.noise) {
            (SensitivitySpec::Hybrid { blocks }, NoiseScale::PerBlock(sigmas)) => (blocks, sigmas),
            (SensitivitySpec::Hybrid { blocks }, NoiseScale::Scalar(s)) => {
                return Ok(blocks
                    .iter()
                    .map(|b| (*s, b.effective_cinf(), b.effective_d0()))
                    .collect())
            }
            _ => return Err(Error::unsupported("hybrid accounting needs a hybrid spec")),
        };
        Ok(blocks
            .iter()
            .zip(sigmas)
            .map(|(b, &s)| (s, b.effective_cinf(), b.effective_d0()))
            .collect())
    }

    /// ε(α) for this mechanism.
    pub fn rdp_at(&self, alpha: u32) -> Result<f64> {
        self.validate()?;
        match self.kind {
            MechanismKind::PureGaussian => match (&self.sensitivity, &self.noise) {
                (SensitivitySpec::Hybrid { blocks }, NoiseScale::PerBlock(sigmas)) => {
                    // Anisotropic Gaussian on a hybrid set: per-block worst
                    // cases add up.
                    let mut loss = 0.0;
                    for (b, &s) in blocks.iter().zip(sigmas) {
                        loss += b.c2 * b.c2 / (s * s);
                    }
                    Ok(alpha as f64 / 2.0 * loss)
                }
                _ => gaussian_rdp(alpha, self.max_l2()?, self.scalar_sigma()?),
            },
            MechanismKind::InputSampled => {
                if self.plan.q2 != 1.0 {
                    return Err(Error::validation(
                        "input-sampled mechanisms must have q2 = 1",
                    ));
                }
                subsampled_gaussian_rdp_1d(
                    alpha,
                    self.plan.q1,
                    self.max_l2()?,
                    self.scalar_sigma()?,
                )
            }
            MechanismKind::CoordinateSampled => {
                if self.plan.q1 != 1.0 {
                    return Err(Error::validation(
                        "coordinate-sampled mechanisms must have q1 = 1",
                    ));
                }
                match &self.sensitivity {
                    SensitivitySpec::Hybrid { .. } => {
                        coordinate_sampling_rdp_hybrid(alpha, self.plan.q2, &self.hybrid_blocks()?)
                    }
                    _ => {
                        let (cinf, d0, c_rem) = self.coordinate_budget()?;
                        coordinate_sampling_rdp(
                            alpha,
                            self.plan.q2,
                            d0,
                            c_rem,
                            cinf,
                            self.scalar_sigma()?,
                        )
                    }
                }
            }
            MechanismKind::TwiceSampled => match &self.sensitivity {
                SensitivitySpec::Hybrid { .. } => {
                    let blocks = self.hybrid_blocks()?;
                    twice_sampling_rdp(alpha, self.plan.q1, |v| {
                        coordinate_sampling_rdp_hybrid(v, self.plan.q2, &blocks)
                    })
                }
                _ => {
                    let (cinf, d0, c_rem) = self.coordinate_budget()?;
                    let sigma = self.scalar_sigma()?;
                    twice_sampling_rdp(alpha, self.plan.q1, |v| {
                        coordinate_sampling_rdp(v, self.plan.q2, d0, c_rem, cinf, sigma)
                    })
                }
            },
        }
    }

    /// The full curve over an order grid.
    pub fn rdp_curve(&self, alpha_grid: &[u32]) -> Result<RdpCurve> {
        if alpha_grid.is_empty() {
            return Err(Error::validation("alpha grid must be non-empty"));
        }
        let mut curve = RdpCurve::new();
        for &alpha in alpha_grid {
            curve.insert(alpha, self.rdp_at(alpha)?)?;
        }
        Ok(curve)
    }

    /// Composed-and-converted ε̃ at (T, δ) over the grid.
    pub fn converted_eps(&self, alpha_grid: &[u32], t: u64, delta: f64) -> Result<Conversion> {
        compose_and_convert(&self.rdp_curve(alpha_grid)?, t, delta)
    }
}

/// Geometric bracket the σ calibration searches.
pub const SIGMA_BRACKET: (f64, f64) = (1e-3, 1e4);

/// Finds the smallest σ in the bracket whose converted ε is at most
/// `target_eps`, by geometric bisection to 1e-6 relative. `eps_of_sigma`
/// must be nonincreasing in σ; this is spot-checked on the bracket before
/// the search starts.
pub fn calibrate_sigma<F>(eps_of_sigma: F, target_eps: f64) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    if !(target_eps > 0.0) {
        return Err(Error::validation(format!(
            "target epsilon must be positive, got {target_eps}"
        )));
    }
    let (mut lo, mut hi) = SIGMA_BRACKET;
    let f_lo = eps_of_sigma(lo)?;
    let f_hi = eps_of_sigma(hi)?;
    let mid0 = (lo * hi).sqrt();
    let f_mid = eps_of_sigma(mid0)?;
    let slack = 1e-9 * f_lo.abs().max(1.0);
    if f_lo + slack < f_mid || f_mid + slack < f_hi {
        return Err(Error::numeric(format!(
            "epsilon is not monotone in sigma on the bracket: \
             eps({lo}) = {f_lo}, eps({mid0}) = {f_mid}, eps({hi}) = {f_hi}"
        )));
    }
    if f_lo <= target_eps {
        return Ok(lo);
    }
    if f_hi > target_eps {
        return Err(Error::infeasible(format!(
            "target eps {target_eps} unreachable: eps({hi}) = {f_hi}"
        )));
    }
    while hi / lo - 1.0 > 1e-6 {
        let mid = (lo * hi).sqrt();
        if eps_of_sigma(mid)? <= target_eps {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}
