//! The five subcommands. These are thin adapters: every number they emit
//! comes from a single library call, so golden tests can compare CLI output
//! against direct library results.

use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use dpgeom::io;
use dpgeom::noise::{
    calibrated_variance, optimize_noise_twice_hybrid, NoiseProfile, TwiceHybridBlock,
};
use dpgeom::rdp::{
    coordinate_sampling_rdp, subsampled_gaussian_rdp_1d, twice_sampling_rdp, MechanismKind,
    SamplingPlan,
};
use dpgeom::sampler::hybrid_pipeline;
use dpgeom::sensitivity::SensitivitySpec;
use dpgeom::subspace::{generate_basis_seeded, subspace_stats, OrthoBasis};
use dpgeom::{Error, Result};

use crate::config::{
    alpha_grid, ensure_out_dir, load_json, AmplifyConfig, BasisConfig, CompareConfig,
    EpsilonConfig, SimulateConfig,
};

#[derive(Args)]
pub struct EpsilonArgs {
    /// JSON file holding the mechanism spec and (t, delta).
    #[arg(long)]
    config: PathBuf,
    /// Override the scalar noise sigma from the config.
    #[arg(long)]
    sigma: Option<f64>,
    /// Override the input-wise sampling rate.
    #[arg(long)]
    q1: Option<f64>,
    /// Override the coordinate-wise sampling rate.
    #[arg(long)]
    q2: Option<f64>,
    /// Override the composition count.
    #[arg(long)]
    t: Option<u64>,
    /// Override delta.
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Serialize)]
struct EpsilonReport {
    eps_tilde: f64,
    alpha_star: u32,
}

pub fn run_epsilon(args: EpsilonArgs) -> Result<()> {
    let mut cfg: EpsilonConfig = load_json(&args.config)?;
    if let Some(sigma) = args.sigma {
        cfg.mechanism.noise = dpgeom::rdp::NoiseScale::Scalar(sigma);
    }
    if let Some(q1) = args.q1 {
        cfg.mechanism.plan.q1 = q1;
    }
    if let Some(q2) = args.q2 {
        cfg.mechanism.plan.q2 = q2;
    }
    if let Some(t) = args.t {
        cfg.t = t;
    }
    if let Some(delta) = args.delta {
        cfg.delta = delta;
    }
    cfg.mechanism.validate()?;

    let grid = alpha_grid(cfg.alpha_max)?;
    let curve = cfg.mechanism.rdp_curve(&grid)?;
    let conv = dpgeom::rdp::compose_and_convert(&curve, cfg.t, cfg.delta)?;

    ensure_out_dir(&args.out)?;
    io::write_rdp_curve(&args.out.join("rdp_curve.csv"), &curve)?;
    io::write_json(
        &args.out.join("epsilon.json"),
        &EpsilonReport {
            eps_tilde: conv.eps,
            alpha_star: conv.alpha_star,
        },
    )?;
    io::write_json(&args.out.join("epsilon_config.json"), &cfg)?;
    println!("eps_tilde={} alpha_star={}", conv.eps, conv.alpha_star);
    Ok(())
}

#[derive(Args)]
pub struct AmplifyArgs {
    /// Global l2 clipping radius.
    #[arg(long, default_value_t = 1.0)]
    c2: f64,
    /// Effective per-coordinate rate q = q1*q2.
    #[arg(long, default_value_t = 0.005)]
    q: f64,
    /// Stage-two rates for the twice-sampling curves.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.5, 1.0/3.0, 0.25])]
    q2_list: Vec<f64>,
    /// Saturated-coordinate counts; cinf = c2/sqrt(d0).
    #[arg(long, value_delimiter = ',', default_values_t = vec![16, 64, 256])]
    d0_list: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![4, 8])]
    alpha_list: Vec<u32>,
    #[arg(long, default_value_t = 0.25)]
    sigma_min: f64,
    #[arg(long, default_value_t = 4.0)]
    sigma_max: f64,
    /// Number of sigma grid points (geometric spacing).
    #[arg(long, default_value_t = 25)]
    sigma_steps: usize,
    #[arg(long)]
    out: PathBuf,
}

pub fn run_amplify(args: AmplifyArgs) -> Result<()> {
    if args.sigma_steps < 2 || !(args.sigma_min > 0.0) || args.sigma_max <= args.sigma_min {
        return Err(Error::validation(
            "need sigma_max > sigma_min > 0 and >= 2 steps",
        ));
    }
    let cfg = AmplifyConfig {
        c2: args.c2,
        q: args.q,
        q2_list: args.q2_list.clone(),
        d0_list: args.d0_list.clone(),
        alpha_list: args.alpha_list.clone(),
        sigma_min: args.sigma_min,
        sigma_max: args.sigma_max,
        sigma_steps: args.sigma_steps,
    };
    ensure_out_dir(&args.out)?;

    let ratio = (args.sigma_max / args.sigma_min).powf(1.0 / (args.sigma_steps - 1) as f64);
    let mut writer =
        csv::Writer::from_path(args.out.join("amplify_curve.csv")).map_err(dpgeom::Error::from)?;
    writer
        .write_record(["sigma", "mechanism", "alpha", "d0", "q1", "q2", "log_eps"])
        .map_err(dpgeom::Error::from)?;

    let mut write_row =
        |sigma: f64, mech: &str, alpha: u32, d0: usize, q1: f64, q2: f64, eps: f64| {
            writer
                .write_record(&[
                    format!("{sigma:.12e}"),
                    mech.to_string(),
                    alpha.to_string(),
                    d0.to_string(),
                    format!("{q1:.12e}"),
                    format!("{q2:.12e}"),
                    format!("{:.12e}", eps.ln()),
                ])
                .map_err(dpgeom::Error::from)
        };

    for step in 0..args.sigma_steps {
        let sigma = args.sigma_min * ratio.powi(step as i32);
        for &alpha in &args.alpha_list {
            for &d0 in &args.d0_list {
                let cinf = args.c2 / (d0 as f64).sqrt();
                let input = subsampled_gaussian_rdp_1d(alpha, args.q, args.c2, sigma)?;
                write_row(sigma, "input_wise", alpha, d0, args.q, 1.0, input)?;
                let coord = coordinate_sampling_rdp(alpha, args.q, d0, 0.0, cinf, sigma)?;
                write_row(sigma, "coordinate", alpha, d0, 1.0, args.q, coord)?;
                for &q2 in &args.q2_list {
                    let q1 = args.q / q2;
                    if q1 > 1.0 {
                        return Err(Error::validation(format!(
                            "q2 = {q2} implies q1 = {q1} > 1"
                        )));
                    }
                    let twice = twice_sampling_rdp(alpha, q1, |v| {
                        coordinate_sampling_rdp(v, q2, d0, 0.0, cinf, sigma)
                    })?;
                    write_row(sigma, "twice", alpha, d0, q1, q2, twice)?;
                }
            }
        }
    }
    writer.flush().map_err(Error::Io)?;
    io::write_json(&args.out.join("amplify_config.json"), &cfg)?;
    println!(
        "wrote amplify_curve.csv ({} sigma points)",
        args.sigma_steps
    );
    Ok(())
}

#[derive(Args)]
pub struct CompareArgs {
    /// JSON file with (t, delta, target_eps) and the two mechanism specs.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Serialize)]
struct CompareSide {
    sigmas: Vec<f64>,
    total_variance: f64,
    alpha_star: u32,
    achieved_eps: f64,
}

#[derive(Serialize)]
struct CompareReport {
    baseline: CompareSide,
    candidate: CompareSide,
    /// candidate total variance / baseline total variance.
    variance_ratio: f64,
}

pub fn run_compare(args: CompareArgs) -> Result<()> {
    let cfg: CompareConfig = load_json(&args.config)?;
    let grid = alpha_grid(cfg.alpha_max)?;

    let calibrate = |spec: &dpgeom::rdp::MechanismSpec| -> Result<CompareSide> {
        let rep = calibrated_variance(spec, cfg.t, cfg.delta, cfg.target_eps, &grid)?;
        Ok(CompareSide {
            sigmas: rep.sigmas,
            total_variance: rep.total_variance,
            alpha_star: rep.alpha_star,
            achieved_eps: rep.achieved_eps,
        })
    };

    let baseline = calibrate(&cfg.baseline)?;
    let candidate = if cfg.optimize_candidate_blocks {
        match (&cfg.candidate.kind, &cfg.candidate.sensitivity) {
            (MechanismKind::TwiceSampled, SensitivitySpec::Hybrid { blocks }) => {
                let opt_blocks: Vec<TwiceHybridBlock> = blocks
                    .iter()
                    .map(|b| TwiceHybridBlock {
                        rank: b.rank,
                        c2: b.c2,
                        d0: b.d0.unwrap_or(1),
                    })
                    .collect();
                let sol = optimize_noise_twice_hybrid(
                    cfg.candidate.plan.q1,
                    cfg.candidate.plan.q2,
                    &opt_blocks,
                    cfg.t,
                    cfg.delta,
                    cfg.target_eps,
                    &grid,
                )?;
                CompareSide {
                    sigmas: sol.sigmas,
                    total_variance: sol.total_variance,
                    alpha_star: sol.alpha_star,
                    achieved_eps: sol.achieved_eps,
                }
            }
            _ => {
                return Err(Error::validation(
                    "optimize_candidate_blocks requires a twice-sampled hybrid candidate",
                ))
            }
        }
    } else {
        calibrate(&cfg.candidate)?
    };

    let report = CompareReport {
        variance_ratio: candidate.total_variance / baseline.total_variance,
        baseline,
        candidate,
    };
    ensure_out_dir(&args.out)?;
    io::write_json(&args.out.join("compare_variance.json"), &report)?;
    io::write_json(&args.out.join("compare_config.json"), &cfg)?;
    println!("variance_ratio={}", report.variance_ratio);
    Ok(())
}

#[derive(Args)]
pub struct BasisArgs {
    /// Sample CSV, one sample per row.
    #[arg(long)]
    input: PathBuf,
    /// Leading block ranks; the residual block absorbs the rest.
    #[arg(long, value_delimiter = ',')]
    ranks: Vec<usize>,
    #[arg(long, default_value_t = 50)]
    power_iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

pub fn run_basis(args: BasisArgs) -> Result<()> {
    let samples = io::read_sample_matrix(&args.input)?;
    let basis = generate_basis_seeded(&samples, &args.ranks, args.power_iters, args.seed)?;
    let stats = subspace_stats(&samples, &basis)?;

    ensure_out_dir(&args.out)?;
    io::write_basis(
        &args.out.join("basis.csv"),
        &args.out.join("basis_meta.json"),
        &basis,
    )?;
    io::write_json(&args.out.join("subspace_stats.json"), &stats)?;
    io::write_json(
        &args.out.join("basis_config.json"),
        &BasisConfig {
            input: args.input.clone(),
            ranks: args.ranks.clone(),
            power_iters: args.power_iters,
            seed: args.seed,
        },
    )?;
    println!(
        "basis blocks {:?}; per-block mean l2 {:?}",
        basis.block_ranks(),
        stats.iter().map(|s| s.mean_l2).collect::<Vec<_>>()
    );
    Ok(())
}

#[derive(Args)]
pub struct SimulateArgs {
    /// JSON file with input paths, blocks, rates, sigmas, seed and (t, delta).
    #[arg(long)]
    config: PathBuf,
    /// Override the seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Serialize)]
struct SimulateSidecar {
    meta: dpgeom::sampler::ReleaseMeta,
    eps_tilde: f64,
    alpha_star: u32,
}

pub fn run_simulate(args: SimulateArgs) -> Result<()> {
    let mut cfg: SimulateConfig = load_json(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let samples = io::read_sample_matrix(&cfg.input)?;
    let basis = match (&cfg.basis_csv, &cfg.basis_meta) {
        (Some(csv), Some(meta)) => io::read_basis(csv, meta)?,
        (None, None) => {
            let ranks: Vec<usize> = cfg.blocks.iter().map(|b| b.rank).collect();
            OrthoBasis::identity(samples.dim(), ranks)?
        }
        _ => {
            return Err(Error::validation(
                "basis_csv and basis_meta must be given together",
            ))
        }
    };
    let ranks: Vec<usize> = cfg.blocks.iter().map(|b| b.rank).collect();
    let profile = NoiseProfile::per_block(ranks, cfg.sigmas.clone(), None)?;
    let release = hybrid_pipeline(
        &samples,
        &basis,
        &cfg.blocks,
        cfg.q1,
        cfg.q2,
        &profile,
        cfg.seed,
    )?;

    let grid = alpha_grid(cfg.alpha_max)?;
    let conv = release.meta.converted_eps(&grid, cfg.t, cfg.delta)?;

    ensure_out_dir(&args.out)?;
    io::write_release_vector(&args.out.join("release.csv"), &release.output)?;
    io::write_json(
        &args.out.join("release_meta.json"),
        &SimulateSidecar {
            meta: release.meta.clone(),
            eps_tilde: conv.eps,
            alpha_star: conv.alpha_star,
        },
    )?;
    io::write_json(&args.out.join("simulate_config.json"), &cfg)?;
    println!(
        "release written; eps_tilde={} alpha_star={} (T={}, delta={})",
        conv.eps, conv.alpha_star, cfg.t, cfg.delta
    );
    Ok(())
}

/// Sampling-plan helper shared by tests.
#[allow(dead_code)]
pub fn plan(q1: f64, q2: f64) -> Result<SamplingPlan> {
    SamplingPlan::new(q1, q2)
}
