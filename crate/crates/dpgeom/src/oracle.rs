//! Independent numerical verification of the closed-form bounds: quadrature
//! Rényi divergences between 1-D Gaussian mixtures, exact small-instance
//! mixture divergences for twice sampling, brute-force loss suprema over
//! hypercube vertices, and randomized checks of the two supporting lemmas
//! (log-convexity closure under addition, doubly-stochastic majorization).
//!
//! Nothing here calls the closed-form accountant; agreement between the two
//! paths is what the acceptance suite asserts.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::noise::LossEval;
use crate::numeric::LogSumAcc;
use crate::subspace::OrthoBasis;
use crate::{Error, Result};

const LN_2PI: f64 = 1.8378770664093453;

/// Quadrature window margin in units of the largest component σ.
const WINDOW_SIGMAS: f64 = 12.0;

/// Node cap for 1-D refinement (per pass).
const MAX_NODES_1D: usize = 1 << 21;

/// Per-axis node cap for the 2-D tensor quadrature.
const MAX_NODES_2D: usize = 1 << 12;

/// Above this log-integrand magnitude the difference quadrature would
/// overflow and evaluation switches to log-sum-exp form.
const DIRECT_LIMIT: f64 = 500.0;

/// A finite mixture of 1-D Gaussians.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture1D {
    /// (weight, mean, sigma) triples; weights sum to one within 1e-12.
    pub components: Vec<(f64, f64, f64)>,
}

impl GaussianMixture1D {
    pub fn new(components: Vec<(f64, f64, f64)>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::validation("mixture needs at least one component"));
        }
        let mut total = 0.0;
        for &(w, m, s) in &components {
            if !(w >= 0.0 && w.is_finite()) || !m.is_finite() {
                return Err(Error::validation("mixture weights/means must be finite"));
            }
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::validation("mixture sigmas must be positive"));
            }
            total += w;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::validation(format!(
                "mixture weights sum to {total}, expected 1"
            )));
        }
        Ok(GaussianMixture1D { components })
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        let mut acc = LogSumAcc::new();
        for &(w, m, s) in &self.components {
            if w == 0.0 {
                continue;
            }
            let z = (x - m) / s;
            acc.add(w.ln() - 0.5 * z * z - s.ln() - 0.5 * LN_2PI);
        }
        acc.value()
    }

    fn means(&self) -> impl Iterator<Item = f64> + '_ {
        self.components.iter().map(|&(_, m, _)| m)
    }

    fn max_sigma(&self) -> f64 {
        self.components
            .iter()
            .map(|&(_, _, s)| s)
            .fold(0.0, f64::max)
    }
}

/// Integration window covering every mixture mean and every α-tilted
/// combination α·m_p + (1−α)·m_q, where the integrand's Gaussian bumps sit.
fn window_1d(p: &GaussianMixture1D, q: &GaussianMixture1D, alpha: u32) -> (f64, f64) {
    let a = alpha as f64;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for m in p.means().chain(q.means()) {
        lo = lo.min(m);
        hi = hi.max(m);
    }
    for mp in p.means() {
        for mq in q.means() {
            let tilted = a * mp + (1.0 - a) * mq;
            lo = lo.min(tilted);
            hi = hi.max(tilted);
        }
    }
    let margin = WINDOW_SIGMAS * p.max_sigma().max(q.max_sigma());
    (lo - margin, hi + margin)
}

/// Composite-Simpson estimate of D_α(P‖Q) on a fixed node count.
///
/// In the small-divergence regime the integrand is evaluated as
/// q(o)·(exp(α·(ln p − ln q)) − 1), whose integral is e^{(α−1)ε} − 1; this
/// avoids the catastrophic cancellation of log(≈1). Large divergences are
/// accumulated in log space instead.
fn renyi_simpson_1d(
    p: &GaussianMixture1D,
    q: &GaussianMixture1D,
    alpha: u32,
    lo: f64,
    hi: f64,
    n: usize,
    direct: bool,
) -> Result<f64> {
    let a = alpha as f64;
    let h = (hi - lo) / n as f64;
    let coef = |i: usize| -> f64 {
        if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        }
    };
    if direct {
        let mut sum = 0.0;
        for i in 0..=n {
            let x = lo + h * i as f64;
            let ln_q = q.log_pdf(x);
            let ln_p = p.log_pdf(x);
            let tilt = a * (ln_p - ln_q);
            let g = if tilt > 30.0 {
                let t = ln_q + tilt;
                if t > 690.0 {
                    return Err(Error::numeric(
                        "direct quadrature overflow; integrand exceeded regime bound",
                    ));
                }
                t.exp()
            } else {
                ln_q.exp() * libm::expm1(tilt)
            };
            sum += coef(i) * g;
        }
        let excess = sum * h / 3.0;
        Ok(excess.ln_1p() / (a - 1.0))
    } else {
        let mut acc = LogSumAcc::new();
        for i in 0..=n {
            let x = lo + h * i as f64;
            let t = (1.0 - a) * q.log_pdf(x) + a * p.log_pdf(x);
            acc.add(coef(i).ln() + t);
        }
        Ok(((h / 3.0).ln() + acc.value()) / (a - 1.0))
    }
}

/// α-Rényi divergence D_α(P‖Q) by adaptive composite quadrature, refined by
/// node doubling until two successive estimates agree to 1e-9 relative
/// (with a 1e-12 absolute floor for vanishing divergences).
pub fn renyi_quadrature_1d(
    p: &GaussianMixture1D,
    q: &GaussianMixture1D,
    alpha: u32,
) -> Result<f64> {
    if alpha < 2 {
        return Err(Error::validation("order must be >= 2"));
    }
    let (lo, hi) = window_1d(p, q, alpha);

    // Probe the integrand magnitude to pick the evaluation regime.
    let a = alpha as f64;
    let mut max_t = f64::NEG_INFINITY;
    for i in 0..=512 {
        let x = lo + (hi - lo) * i as f64 / 512.0;
        let t = (1.0 - a) * q.log_pdf(x) + a * p.log_pdf(x);
        max_t = max_t.max(t);
    }
    let direct = max_t < DIRECT_LIMIT;

    let mut n = 1024;
    let mut prev = renyi_simpson_1d(p, q, alpha, lo, hi, n, direct)?;
    while n < MAX_NODES_1D {
        n *= 2;
        let cur = renyi_simpson_1d(p, q, alpha, lo, hi, n, direct)?;
        if (cur - prev).abs() <= 1e-9 * cur.abs().max(prev.abs()) + 1e-12 {
            return Ok(cur.max(0.0));
        }
        prev = cur;
    }
    Err(Error::numeric(format!(
        "quadrature did not converge below the node cap; last estimates {prev} and {}",
        renyi_simpson_1d(p, q, alpha, lo, hi, n, direct)?
    )))
}

/// Enumerates the exact output mixture of twice sampling on `rows` (noise
/// added separately): every input-selection and coordinate-selection pattern
/// with its probability, merged over identical mean vectors.
pub fn enumerate_twice_mixture(
    rows: &[Vec<f64>],
    d: usize,
    q1: f64,
    q2: f64,
) -> Vec<(f64, Vec<f64>)> {
    let mut merged: HashMap<Vec<u64>, (f64, Vec<f64>)> = HashMap::new();
    let mut mean = vec![0.0; d];
    fn recurse(
        rows: &[Vec<f64>],
        q1: f64,
        q2: f64,
        i: usize,
        weight: f64,
        mean: &mut Vec<f64>,
        merged: &mut HashMap<Vec<u64>, (f64, Vec<f64>)>,
    ) {
        if weight == 0.0 {
            return;
        }
        if i == rows.len() {
            let key: Vec<u64> = mean.iter().map(|m| m.to_bits()).collect();
            let entry = merged.entry(key).or_insert((0.0, mean.clone()));
            entry.0 += weight;
            return;
        }
        let d = mean.len();
        // Row excluded by the input-wise stage.
        recurse(rows, q1, q2, i + 1, weight * (1.0 - q1), mean, merged);
        if q1 > 0.0 {
            // Row retained: enumerate its per-coordinate selections.
            for mask in 0..(1usize << d) {
                let mut w = weight * q1;
                for l in 0..d {
                    if mask & (1 << l) != 0 {
                        w *= q2;
                        mean[l] += rows[i][l];
                    } else {
                        w *= 1.0 - q2;
                    }
                }
                recurse(rows, q1, q2, i + 1, w, mean, merged);
                for l in 0..d {
                    if mask & (1 << l) != 0 {
                        mean[l] -= rows[i][l];
                    }
                }
            }
        }
    }
    recurse(rows, q1, q2, 0, 1.0, &mut mean, &mut merged);
    merged.into_values().collect()
}

/// Product-Gaussian mixture in up to two dimensions with a common σ.
struct MixtureNd {
    /// (ln weight, mean vector) per component.
    comps: Vec<(f64, Vec<f64>)>,
    sigma: f64,
    dim: usize,
}

impl MixtureNd {
    fn new(components: &[(f64, Vec<f64>)], sigma: f64, dim: usize) -> Self {
        let comps = components
            .iter()
            .filter(|(w, _)| *w > 0.0)
            .map(|(w, m)| (w.ln(), m.clone()))
            .collect();
        MixtureNd { comps, sigma, dim }
    }

    fn axis_means(&self, axis: usize) -> impl Iterator<Item = f64> + '_ {
        self.comps.iter().map(move |(_, m)| m[axis])
    }

    /// Per-component log-density factor tables along one axis.
    fn axis_tables(&self, axis: usize, nodes: &[f64]) -> Vec<Vec<f64>> {
        let inv = 1.0 / (2.0 * self.sigma * self.sigma);
        self.comps
            .iter()
            .map(|(_, m)| {
                nodes
                    .iter()
                    .map(|&x| -(x - m[axis]) * (x - m[axis]) * inv)
                    .collect()
            })
            .collect()
    }

    fn log_norm(&self) -> f64 {
        -(self.dim as f64) * (self.sigma.ln() + 0.5 * LN_2PI)
    }
}

/// Log-density at a 2-D grid node from precomputed axis tables, with a
/// 40-nat cutoff below the leading component.
fn log_pdf_from_tables(
    comps: &[(f64, Vec<f64>)],
    ta: &[Vec<f64>],
    tb: &[Vec<f64>],
    log_norm: f64,
    i: usize,
    j: usize,
) -> f64 {
    let mut hi = f64::NEG_INFINITY;
    for (k, (lw, _)) in comps.iter().enumerate() {
        let t = lw + ta[k][i] + tb[k][j];
        if t > hi {
            hi = t;
        }
    }
    if hi == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let mut sum = 0.0;
    for (k, (lw, _)) in comps.iter().enumerate() {
        let t = lw + ta[k][i] + tb[k][j];
        if t > hi - 40.0 {
            sum += (t - hi).exp();
        }
    }
    hi + sum.ln() + log_norm
}

fn window_axis(p: &MixtureNd, q: &MixtureNd, axis: usize, alpha: u32) -> (f64, f64) {
    let a = alpha as f64;
    let (mut p_lo, mut p_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for m in p.axis_means(axis) {
        p_lo = p_lo.min(m);
        p_hi = p_hi.max(m);
    }
    let (mut q_lo, mut q_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for m in q.axis_means(axis) {
        q_lo = q_lo.min(m);
        q_hi = q_hi.max(m);
    }
    let tilt_lo = a * p_lo + (1.0 - a) * q_hi;
    let tilt_hi = a * p_hi + (1.0 - a) * q_lo;
    let margin = WINDOW_SIGMAS * p.sigma.max(q.sigma);
    (
        p_lo.min(q_lo).min(tilt_lo) - margin,
        p_hi.max(q_hi).max(tilt_hi) + margin,
    )
}

/// Tensor-product Simpson estimate of D_α(P‖Q) for 2-D mixtures.
fn renyi_simpson_2d(p: &MixtureNd, q: &MixtureNd, alpha: u32, n: usize) -> Result<f64> {
    let a = alpha as f64;
    let (x_lo, x_hi) = window_axis(p, q, 0, alpha);
    let (y_lo, y_hi) = window_axis(p, q, 1, alpha);
    let hx = (x_hi - x_lo) / n as f64;
    let hy = (y_hi - y_lo) / n as f64;
    let xs: Vec<f64> = (0..=n).map(|i| x_lo + hx * i as f64).collect();
    let ys: Vec<f64> = (0..=n).map(|j| y_lo + hy * j as f64).collect();
    let coef = |i: usize| -> f64 {
        if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        }
    };

    let pa = p.axis_tables(0, &xs);
    let pb = p.axis_tables(1, &ys);
    let qa = q.axis_tables(0, &xs);
    let qb = q.axis_tables(1, &ys);
    let (p_norm, q_norm) = (p.log_norm(), q.log_norm());

    // First sweep decides the regime from the largest log-integrand.
    let mut max_t = f64::NEG_INFINITY;
    let probe = 64.min(n);
    for i in (0..=n).step_by((n / probe).max(1)) {
        for j in (0..=n).step_by((n / probe).max(1)) {
            let lp = log_pdf_from_tables(&p.comps, &pa, &pb, p_norm, i, j);
            let lq = log_pdf_from_tables(&q.comps, &qa, &qb, q_norm, i, j);
            max_t = max_t.max((1.0 - a) * lq + a * lp);
        }
    }

    if max_t < DIRECT_LIMIT {
        let mut sum = 0.0;
        for i in 0..=n {
            let ci = coef(i);
            for j in 0..=n {
                let lp = log_pdf_from_tables(&p.comps, &pa, &pb, p_norm, i, j);
                let lq = log_pdf_from_tables(&q.comps, &qa, &qb, q_norm, i, j);
                let tilt = a * (lp - lq);
                let g = if tilt > 30.0 {
                    let t = lq + tilt;
                    if t > 690.0 {
                        return Err(Error::numeric("2-D quadrature overflow"));
                    }
                    t.exp()
                } else if lq == f64::NEG_INFINITY {
                    0.0
                } else {
                    lq.exp() * libm::expm1(tilt)
                };
                sum += ci * coef(j) * g;
            }
        }
        let excess = sum * hx * hy / 9.0;
        Ok(excess.ln_1p() / (a - 1.0))
    } else {
        let mut acc = LogSumAcc::new();
        for i in 0..=n {
            let ci = coef(i).ln();
            for j in 0..=n {
                let lp = log_pdf_from_tables(&p.comps, &pa, &pb, p_norm, i, j);
                let lq = log_pdf_from_tables(&q.comps, &qa, &qb, q_norm, i, j);
                acc.add(ci + coef(j).ln() + (1.0 - a) * lq + a * lp);
            }
        }
        Ok(((hx * hy / 9.0).ln() + acc.value()) / (a - 1.0))
    }
}

fn refine_2d(p: &MixtureNd, q: &MixtureNd, alpha: u32) -> Result<f64> {
    let mut n = 256;
    let mut prev = renyi_simpson_2d(p, q, alpha, n)?;
    while n < MAX_NODES_2D {
        n *= 2;
        let cur = renyi_simpson_2d(p, q, alpha, n)?;
        if (cur - prev).abs() <= 1e-6 * cur.abs().max(prev.abs()) + 1e-9 {
            return Ok(cur.max(0.0));
        }
        prev = cur;
    }
    Err(Error::numeric(format!(
        "2-D quadrature did not converge; last estimate {prev}"
    )))
}

/// Exact α-Rényi divergence of twice sampling on a tiny instance: the output
/// mixtures of the common rows `y` and of `y ∪ {x}` are enumerated pattern by
/// pattern and integrated numerically. Returns the larger of the two
/// divergence directions.
pub fn exact_twice_mixture_divergence(
    y: &[Vec<f64>],
    x: &[f64],
    q1: f64,
    q2: f64,
    sigma: f64,
    alpha: u32,
) -> Result<f64> {
    let d = x.len();
    let n = y.len();
    if n > 3 || d > 2 || d == 0 {
        return Err(Error::validation(
            "exact enumeration is limited to n <= 3 rows and d <= 2 coordinates",
        ));
    }
    for row in y {
        if row.len() != d {
            return Err(Error::validation("row length mismatch"));
        }
        crate::ensure_finite("row", row)?;
    }
    crate::ensure_finite("x", x)?;
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::validation("sigma must be positive"));
    }
    if !(0.0..=1.0).contains(&q1) || !(0.0..=1.0).contains(&q2) {
        return Err(Error::validation("rates must lie in [0, 1]"));
    }
    if alpha < 2 {
        return Err(Error::validation("order must be >= 2"));
    }
    if q1 == 0.0 {
        return Ok(0.0);
    }

    let base = enumerate_twice_mixture(y, d, q1, q2);
    let mut extended_rows = y.to_vec();
    extended_rows.push(x.to_vec());
    let extended = enumerate_twice_mixture(&extended_rows, d, q1, q2);

    if d == 1 {
        let p = GaussianMixture1D::new(extended.iter().map(|(w, m)| (*w, m[0], sigma)).collect())?;
        let q = GaussianMixture1D::new(base.iter().map(|(w, m)| (*w, m[0], sigma)).collect())?;
        let fwd = renyi_quadrature_1d(&p, &q, alpha)?;
        let bwd = renyi_quadrature_1d(&q, &p, alpha)?;
        Ok(fwd.max(bwd))
    } else {
        let p = MixtureNd::new(&extended, sigma, d);
        let q = MixtureNd::new(&base, sigma, d);
        let fwd = refine_2d(&p, &q, alpha)?;
        let bwd = refine_2d(&q, &p, alpha)?;
        Ok(fwd.max(bwd))
    }
}

/// Exact maximum of the quadratic loss over all sign-pattern vertices of an
/// axis-aligned hypercube, optionally rotated by a basis. Plain full
/// re-evaluation per vertex; this is the brute-force twin of the closed-form
/// loss and shares no code with it.
pub fn vertex_sup_loss(
    basis: Option<&OrthoBasis>,
    sigmas: &[f64],
    sides: &[f64],
) -> Result<LossEval> {
    let d = sides.len();
    if d == 0 || d > 20 {
        return Err(Error::validation(format!(
            "vertex enumeration supports 1 <= d <= 20, got {d}"
        )));
    }
    if sigmas.len() != d {
        return Err(Error::validation("sigma/side length mismatch"));
    }
    if let Some(b) = basis {
        if b.dim() != d {
            return Err(Error::validation("basis dimension mismatch"));
        }
    }
    let mut best = f64::NEG_INFINITY;
    let mut witness = vec![0.0; d];
    for mask in 0..(1usize << d) {
        let s: Vec<f64> = (0..d)
            .map(|i| {
                if mask & (1 << i) != 0 {
                    -sides[i]
                } else {
                    sides[i]
                }
            })
            .collect();
        let rotated = match basis {
            Some(b) => b.to_basis(&s)?,
            None => s.clone(),
        };
        let mut loss = 0.0;
        for (v, sig) in rotated.iter().zip(sigmas) {
            if *sig > 0.0 {
                loss += (v / sig) * (v / sig);
            } else if v.abs() > 1e-14 {
                loss = f64::INFINITY;
            }
        }
        if loss > best {
            best = loss;
            witness = s;
        }
    }
    Ok(LossEval {
        value: best,
        witness: Some(witness),
    })
}

/// Outcome of the randomized lemma checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub convexity_trials: usize,
    pub convexity_violations: usize,
    pub majorization_trials: usize,
    pub majorization_violations: usize,
    /// Largest observed violation beyond the 1e-10 slack (0 when clean).
    pub max_violation: f64,
}

/// Σ√((Ma)_i) − Σ√(a_i): nonnegative for doubly stochastic M and sorted
/// nonnegative a; exactly zero for the identity and any permutation matrix.
pub fn majorization_deficit(m: &[Vec<f64>], a: &[f64]) -> f64 {
    let mixed: f64 = m
        .iter()
        .map(|row| {
            row.iter()
                .zip(a)
                .map(|(mij, aj)| mij * aj)
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    let plain: f64 = a.iter().map(|x| x.sqrt()).sum();
    mixed - plain
}

/// Sinkhorn-normalizes a positive matrix into a doubly stochastic one.
fn sinkhorn<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut m: Vec<Vec<f64>> = (0..d)
        .map(|_| (0..d).map(|_| rng.random_range(0.05..1.0)).collect())
        .collect();
    for _ in 0..200 {
        for row in m.iter_mut() {
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= s);
        }
        for j in 0..d {
            let s: f64 = m.iter().map(|row| row[j]).sum();
            m.iter_mut().for_each(|row| row[j] /= s);
        }
    }
    m
}

/// Randomized verification of the two structural lemmas behind the bounds:
///
/// (a) for log-convex f, g of the exponential form appearing in the
/// coordinate-sampling objective, log(f + g) is midpoint-convex;
/// (b) for doubly stochastic M, concave f = √·, and sorted nonnegative a,
/// Σ f((Ma)_i) ≥ Σ f(a_i).
pub fn check_lemma_properties(seed: u64, trials: usize) -> LemmaReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let slack = 1e-10;
    let mut report = LemmaReport {
        convexity_trials: trials,
        convexity_violations: 0,
        majorization_trials: trials,
        majorization_violations: 0,
        max_violation: 0.0,
    };

    for _ in 0..trials {
        let b1f: f64 = rng.random_range(0.1..5.0);
        let b2f: f64 = rng.random_range(0.05..2.0);
        let b1g: f64 = rng.random_range(0.1..5.0);
        let b2g: f64 = rng.random_range(0.05..2.0);
        let p: f64 = rng.random_range(0.3..=2.0);
        let e = 2.0 / p;
        let log_fg = |y: f64| -> f64 {
            let f = b1f * (b2f * y.powf(e)).exp();
            let g = b1g * (b2g * y.powf(e)).exp();
            (f + g).ln()
        };
        let y1: f64 = rng.random_range(0.0..3.0);
        let y2: f64 = rng.random_range(0.0..3.0);
        let mid = log_fg(0.5 * (y1 + y2));
        let chord = 0.5 * (log_fg(y1) + log_fg(y2));
        if mid > chord + slack {
            report.convexity_violations += 1;
            report.max_violation = report.max_violation.max(mid - chord - slack);
        }
    }

    let d = 6;
    for _ in 0..trials {
        let m = sinkhorn(d, &mut rng);
        let mut a: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..5.0)).collect();
        a.sort_by(|x, y| y.total_cmp(x));
        let deficit = majorization_deficit(&m, &a);
        if deficit < -slack {
            report.majorization_violations += 1;
            report.max_violation = report.max_violation.max(-deficit - slack);
        }
    }
    report
}
