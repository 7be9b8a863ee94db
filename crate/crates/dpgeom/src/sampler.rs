//! Executable sampling mechanisms: coordinate-wise Poisson aggregation,
//! twice sampling, and the full hybrid-clipping release pipeline, plus the
//! Monte-Carlo estimator statistics used to verify unbiasedness and variance
//! equality.
//!
//! Randomness is organized as counter-derived streams of a single seeded
//! generator: stream 0 drives the input-wise stage, stream 1+l drives
//! coordinate l's selection and its noise draw. Coordinate loops therefore
//! parallelize without changing the output; identical seeds produce
//! bit-identical releases.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::noise::NoiseProfile;
use crate::rdp::{Conversion, MechanismKind, MechanismSpec, NoiseScale, RdpCurve, SamplingPlan};
use crate::sensitivity::{clip_hybrid, SensitivitySpec, SubspaceClip};
use crate::subspace::{OrthoBasis, SampleMatrix};
use crate::{Error, Result};

const ROW_STREAM: u64 = 0;
const COORD_STREAM_BASE: u64 = 1;
/// Separate stream family for the input-wise baseline inside the estimator.
const BASELINE_STREAM: u64 = u64::MAX;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// splitmix64 step, used to derive independent per-repetition seeds.
fn mix_seed(seed: u64, rep: u64) -> u64 {
    let mut z = seed ^ rep.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Visits the indices of a Poisson(q) subset of 0..n in increasing order,
/// using geometric gap skipping (one uniform draw per selected index).
fn poisson_visit<R: Rng + ?Sized>(rng: &mut R, n: usize, q: f64, mut visit: impl FnMut(usize)) {
    if q <= 0.0 || n == 0 {
        return;
    }
    if q >= 1.0 {
        for i in 0..n {
            visit(i);
        }
        return;
    }
    let ln_keep = (-q).ln_1p();
    let mut i = 0usize;
    while i < n {
        let u: f64 = rng.random();
        let gap = ((1.0 - u).ln() / ln_keep).floor();
        if !gap.is_finite() || gap >= (n - i) as f64 {
            break;
        }
        i += gap as usize;
        visit(i);
        i += 1;
    }
}

fn poisson_indices<R: Rng + ?Sized>(rng: &mut R, n: usize, q: f64) -> Vec<usize> {
    let mut out = Vec::new();
    poisson_visit(rng, n, q, |i| out.push(i));
    out
}

/// Per-coordinate noise magnitude for the aggregation algorithms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum CoordSigma {
    Uniform(f64),
    PerCoordinate(Vec<f64>),
}

impl CoordSigma {
    fn validate(&self, d: usize) -> Result<()> {
        let check = |s: f64| -> Result<()> {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::validation(format!(
                    "noise sigma must be nonnegative, got {s}"
                )));
            }
            Ok(())
        };
        match self {
            CoordSigma::Uniform(s) => check(*s),
            CoordSigma::PerCoordinate(v) => {
                if v.len() != d {
                    return Err(Error::validation(format!(
                        "per-coordinate sigma length {} != dimension {d}",
                        v.len()
                    )));
                }
                v.iter().try_for_each(|&s| check(s))
            }
        }
    }

    fn at(&self, l: usize) -> f64 {
        match self {
            CoordSigma::Uniform(s) => *s,
            CoordSigma::PerCoordinate(v) => v[l],
        }
    }

    fn expand(&self, d: usize) -> Vec<f64> {
        match self {
            CoordSigma::Uniform(s) => vec![*s; d],
            CoordSigma::PerCoordinate(v) => v.clone(),
        }
    }
}

/// Everything needed to recompute the accounting of a release.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReleaseMeta {
    pub plan: SamplingPlan,
    pub seed: u64,
    pub n: usize,
    pub d: usize,
    /// One σ per block (hybrid releases) or per coordinate otherwise.
    pub sigmas: Vec<f64>,
    pub block_ranks: Vec<usize>,
    /// Clipping blocks, present for hybrid releases; required to rebuild the
    /// RDP curve.
    pub clipping: Option<Vec<SubspaceClip>>,
}

impl ReleaseMeta {
    /// Rebuilds the mechanism the release was drawn from. Requires the
    /// clipping blocks; plain aggregates carry no sensitivity information.
    pub fn mechanism_spec(&self) -> Result<MechanismSpec> {
        let blocks = self.clipping.as_ref().ok_or_else(|| {
            Error::validation("release meta carries no clipping info; accounting needs it")
        })?;
        let spec = MechanismSpec {
            kind: MechanismKind::TwiceSampled,
            plan: self.plan,
            dim: self.d,
            sensitivity: SensitivitySpec::Hybrid {
                blocks: blocks.clone(),
            },
            noise: NoiseScale::PerBlock(self.sigmas.clone()),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn rdp_curve(&self, alpha_grid: &[u32]) -> Result<RdpCurve> {
        self.mechanism_spec()?.rdp_curve(alpha_grid)
    }

    pub fn converted_eps(&self, alpha_grid: &[u32], t: u64, delta: f64) -> Result<Conversion> {
        self.mechanism_spec()?.converted_eps(alpha_grid, t, delta)
    }
}

/// A noisy aggregate plus the metadata to account for it.
#[derive(Clone, Debug, PartialEq)]
pub struct PrivateRelease {
    pub output: Vec<f64>,
    pub meta: ReleaseMeta,
}

/// Sums the selected entries of each column over a row subset, with
/// per-coordinate Poisson selection at rate `q2` and per-coordinate noise.
fn aggregate_columns(
    y: &SampleMatrix,
    rows: &[usize],
    q2: f64,
    sigma: &CoordSigma,
    seed: u64,
) -> Vec<f64> {
    let d = y.dim();
    let m = y.matrix();
    (0..d)
        .into_par_iter()
        .map(|l| {
            let mut rng = stream_rng(seed, COORD_STREAM_BASE + l as u64);
            let mut sum = 0.0;
            poisson_visit(&mut rng, rows.len(), q2, |k| {
                sum += m[(rows[k], l)];
            });
            let s = sigma.at(l);
            if s > 0.0 {
                sum += s * rng.sample::<f64, _>(StandardNormal);
            }
            sum
        })
        .collect()
}

/// Coordinate-wise Poisson aggregation: for each coordinate independently,
/// select rows at rate `q` and sum that column over the selection, then add
/// Gaussian noise. Rows are expected to be clipped already.
pub fn coordinate_sample_aggregate(
    y: &SampleMatrix,
    q: f64,
    sigma: &CoordSigma,
    seed: u64,
) -> Result<PrivateRelease> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::validation(format!("q must lie in [0, 1], got {q}")));
    }
    sigma.validate(y.dim())?;
    let rows: Vec<usize> = (0..y.n_samples()).collect();
    let output = aggregate_columns(y, &rows, q, sigma, seed);
    Ok(PrivateRelease {
        output,
        meta: ReleaseMeta {
            plan: SamplingPlan { q1: 1.0, q2: q },
            seed,
            n: y.n_samples(),
            d: y.dim(),
            sigmas: sigma.expand(y.dim()),
            block_ranks: vec![y.dim()],
            clipping: None,
        },
    })
}

/// Twice sampling: input-wise Poisson at `q1`, then coordinate-wise
/// aggregation at `q2` on the retained rows.
pub fn twice_sample_aggregate(
    y: &SampleMatrix,
    q1: f64,
    q2: f64,
    sigma: &CoordSigma,
    seed: u64,
) -> Result<PrivateRelease> {
    let plan = SamplingPlan::new(q1, q2)?;
    sigma.validate(y.dim())?;
    let mut row_rng = stream_rng(seed, ROW_STREAM);
    let rows = poisson_indices(&mut row_rng, y.n_samples(), q1);
    let output = aggregate_columns(y, &rows, q2, sigma, seed);
    Ok(PrivateRelease {
        output,
        meta: ReleaseMeta {
            plan,
            seed,
            n: y.n_samples(),
            d: y.dim(),
            sigmas: sigma.expand(y.dim()),
            block_ranks: vec![y.dim()],
            clipping: None,
        },
    })
}

/// Full hybrid pipeline: rotate every row into the clipping basis, clip each
/// block in ℓ2 then ℓ∞, run twice sampling on the clipped coordinates, add
/// per-block isotropic noise in the basis frame, and rotate the release back
/// to natural coordinates.
pub fn hybrid_pipeline(
    raw: &SampleMatrix,
    basis: &OrthoBasis,
    blocks: &[SubspaceClip],
    q1: f64,
    q2: f64,
    profile: &NoiseProfile,
    seed: u64,
) -> Result<PrivateRelease> {
    let plan = SamplingPlan::new(q1, q2)?;
    let d = raw.dim();
    if basis.dim() != d {
        return Err(Error::validation(format!(
            "basis dimension {} != data dimension {d}",
            basis.dim()
        )));
    }
    if profile.dim() != d {
        return Err(Error::validation(format!(
            "noise profile dimension {} != data dimension {d}",
            profile.dim()
        )));
    }
    let block_ranks: Vec<usize> = blocks.iter().map(|b| b.rank).collect();
    if profile.block_ranks() != block_ranks.as_slice() {
        return Err(Error::validation(
            "noise profile blocks do not match clipping blocks",
        ));
    }
    if let Some(pb) = profile.basis() {
        if pb.columns() != basis.columns() {
            return Err(Error::validation(
                "noise profile basis differs from the clipping basis",
            ));
        }
    }

    let clipped_rows: Vec<Vec<f64>> = (0..raw.n_samples())
        .map(|i| Ok(clip_hybrid(&raw.row(i), basis, blocks)?.in_basis))
        .collect::<Result<_>>()?;
    let clipped = SampleMatrix::from_rows(clipped_rows)?;

    let mut row_rng = stream_rng(seed, ROW_STREAM);
    let rows = poisson_indices(&mut row_rng, raw.n_samples(), q1);
    let sigma = CoordSigma::PerCoordinate(profile.expand());
    let in_basis = aggregate_columns(&clipped, &rows, q2, &sigma, seed);
    let output = basis.from_basis(&in_basis)?;

    Ok(PrivateRelease {
        output,
        meta: ReleaseMeta {
            plan,
            seed,
            n: raw.n_samples(),
            d,
            sigmas: profile.block_sigmas().to_vec(),
            block_ranks,
            clipping: Some(blocks.to_vec()),
        },
    })
}

/// Monte-Carlo estimator statistics for o/(nq) under the plan's sampling,
/// next to the input-wise baseline at the same effective rate. Noise is off:
/// these statistics isolate the sampling randomness.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStats {
    pub reps: usize,
    /// Per-coordinate bias of the plan's estimator o/(nq) against the column means.
    pub bias: Vec<f64>,
    /// Per-coordinate variance of o/(nq).
    pub variance: Vec<f64>,
    /// Per-coordinate bias of the input-wise baseline.
    pub input_bias: Vec<f64>,
    /// Per-coordinate variance of the input-wise baseline.
    pub input_variance: Vec<f64>,
    /// Standard error of each bias entry (√(variance/reps)).
    pub std_err: Vec<f64>,
}

struct Accum {
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    base_sum: Vec<f64>,
    base_sum_sq: Vec<f64>,
}

impl Accum {
    fn new(d: usize) -> Self {
        Accum {
            sum: vec![0.0; d],
            sum_sq: vec![0.0; d],
            base_sum: vec![0.0; d],
            base_sum_sq: vec![0.0; d],
        }
    }

    fn merge(&mut self, other: &Accum) {
        for l in 0..self.sum.len() {
            self.sum[l] += other.sum[l];
            self.sum_sq[l] += other.sum_sq[l];
            self.base_sum[l] += other.base_sum[l];
            self.base_sum_sq[l] += other.base_sum_sq[l];
        }
    }
}

/// Runs `reps` noise-free repetitions of the plan's sampling and of
/// input-wise sampling at rate q = q1·q2, and reports bias and variance of
/// the normalized estimators.
pub fn estimate_mean_stats(
    y: &SampleMatrix,
    plan: &SamplingPlan,
    reps: usize,
    seed: u64,
) -> Result<MeanStats> {
    if reps < 1000 {
        return Err(Error::validation(format!(
            "at least 1000 repetitions required for a meaningful interval, got {reps}"
        )));
    }
    let q = plan.effective_rate();
    if q <= 0.0 {
        return Err(Error::validation(
            "effective sampling rate must be positive",
        ));
    }
    let (n, d) = (y.n_samples(), y.dim());
    let m = y.matrix();
    let norm = 1.0 / (n as f64 * q);

    // Fixed-size chunks merged in order keep the result independent of
    // thread scheduling.
    const CHUNK: usize = 512;
    let n_chunks = reps.div_ceil(CHUNK);
    let partials: Vec<Accum> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut acc = Accum::new(d);
            let lo = chunk * CHUNK;
            let hi = ((chunk + 1) * CHUNK).min(reps);
            let mut est = vec![0.0; d];
            for rep in lo..hi {
                let rep_seed = mix_seed(seed, rep as u64);

                // Plan path: input-wise stage then per-coordinate stage.
                let rows = if plan.q1 >= 1.0 {
                    (0..n).collect::<Vec<usize>>()
                } else {
                    poisson_indices(&mut stream_rng(rep_seed, ROW_STREAM), n, plan.q1)
                };
                for l in 0..d {
                    let mut rng = stream_rng(rep_seed, COORD_STREAM_BASE + l as u64);
                    let mut sum = 0.0;
                    poisson_visit(&mut rng, rows.len(), plan.q2, |k| {
                        sum += m[(rows[k], l)];
                    });
                    est[l] = sum * norm;
                }
                for l in 0..d {
                    acc.sum[l] += est[l];
                    acc.sum_sq[l] += est[l] * est[l];
                }

                // Input-wise baseline at the matched rate.
                est.iter_mut().for_each(|e| *e = 0.0);
                let mut rng = stream_rng(rep_seed, BASELINE_STREAM);
                poisson_visit(&mut rng, n, q, |i| {
                    for l in 0..d {
                        est[l] += m[(i, l)];
                    }
                });
                for l in 0..d {
                    let e = est[l] * norm;
                    acc.base_sum[l] += e;
                    acc.base_sum_sq[l] += e * e;
                }
            }
            acc
        })
        .collect();

    let mut total = Accum::new(d);
    for p in &partials {
        total.merge(p);
    }

    let rf = reps as f64;
    let mut stats = MeanStats {
        reps,
        bias: vec![0.0; d],
        variance: vec![0.0; d],
        input_bias: vec![0.0; d],
        input_variance: vec![0.0; d],
        std_err: vec![0.0; d],
    };
    for l in 0..d {
        let mu = (0..n).map(|i| m[(i, l)]).sum::<f64>() / n as f64;
        let mean = total.sum[l] / rf;
        let var = (total.sum_sq[l] / rf - mean * mean).max(0.0);
        let base_mean = total.base_sum[l] / rf;
        let base_var = (total.base_sum_sq[l] / rf - base_mean * base_mean).max(0.0);
        stats.bias[l] = mean - mu;
        stats.variance[l] = var;
        stats.input_bias[l] = base_mean - mu;
        stats.input_variance[l] = base_var;
        stats.std_err[l] = (var / rf).sqrt();
    }
    Ok(stats)
}
