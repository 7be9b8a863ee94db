//! Golden tests: every number the CLI prints or writes must equal the
//! corresponding direct library call, the outputs must be reproducible from
//! the seed, and failures must map to the documented exit codes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dpgeom::rdp::{MechanismKind, MechanismSpec, NoiseScale, SamplingPlan};
use dpgeom::sensitivity::{SensitivitySpec, SubspaceClip};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_dpgeom")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("failed to launch dpgeom")
}

fn run_ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "command failed: {:?}\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_json(path: &Path, value: &impl serde::Serialize) {
    std::fs::write(path, serde_json::to_string_pretty(value).unwrap()).unwrap();
}

fn twice_spec() -> MechanismSpec {
    MechanismSpec {
        kind: MechanismKind::TwiceSampled,
        plan: SamplingPlan { q1: 0.02, q2: 0.5 },
        dim: 1000,
        sensitivity: SensitivitySpec::LpLinfMix {
            p: 2.0,
            cp: 1.0,
            cinf: 0.1,
        },
        noise: NoiseScale::Scalar(1.2),
    }
}

#[derive(serde::Serialize, serde::Deserialize)]
struct EpsilonFile {
    eps_tilde: f64,
    alpha_star: u32,
}

fn epsilon_config(dir: &Path, spec: &MechanismSpec, t: u64, delta: f64) -> PathBuf {
    let cfg = serde_json::json!({ "mechanism": spec, "t": t, "delta": delta });
    let path = dir.join("mech.json");
    write_json(&path, &cfg);
    path
}

#[test]
fn epsilon_matches_library_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let spec = twice_spec();
    let cfg = epsilon_config(dir.path(), &spec, 500, 1e-5);
    let out_dir = dir.path().join("out");
    run_ok(&[
        "epsilon",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);

    let report: EpsilonFile =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("epsilon.json")).unwrap())
            .unwrap();
    let grid: Vec<u32> = (2..=256).collect();
    let direct = spec.converted_eps(&grid, 500, 1e-5).unwrap();
    assert_eq!(report.eps_tilde, direct.eps);
    assert_eq!(report.alpha_star, direct.alpha_star);

    // The resolved config is written next to the outputs.
    assert!(out_dir.join("epsilon_config.json").exists());
    assert!(out_dir.join("rdp_curve.csv").exists());
}

#[test]
fn epsilon_flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = epsilon_config(dir.path(), &twice_spec(), 500, 1e-5);
    let out_dir = dir.path().join("out");
    run_ok(&[
        "epsilon",
        "--config",
        cfg.to_str().unwrap(),
        "--sigma",
        "2.0",
        "--t",
        "100",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    let report: EpsilonFile =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("epsilon.json")).unwrap())
            .unwrap();
    let mut spec = twice_spec();
    spec.noise = NoiseScale::Scalar(2.0);
    let grid: Vec<u32> = (2..=256).collect();
    let direct = spec.converted_eps(&grid, 100, 1e-5).unwrap();
    assert_eq!(report.eps_tilde, direct.eps);
}

#[test]
fn epsilon_zero_rate_hits_conversion_floor() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = twice_spec();
    spec.plan.q1 = 0.0;
    let cfg = epsilon_config(dir.path(), &spec, 1000, 1e-5);
    let out_dir = dir.path().join("out");
    run_ok(&[
        "epsilon",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    let report: EpsilonFile =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("epsilon.json")).unwrap())
            .unwrap();
    // eps(alpha) = 0 everywhere: only the conversion term -log(delta)/(a-1)
    // remains, minimized at the top of the grid.
    let floor = -(1e-5_f64).ln() / 255.0;
    assert!((report.eps_tilde - floor).abs() < 1e-12);
    assert_eq!(report.alpha_star, 256);
}

#[test]
fn alpha_ceiling_env_is_respected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = epsilon_config(dir.path(), &twice_spec(), 10, 1e-5);
    let out_dir = dir.path().join("out");
    let out = Command::new(bin())
        .env("DPGEOM_ALPHA_MAX", "8")
        .args([
            "epsilon",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let curve = std::fs::read_to_string(out_dir.join("rdp_curve.csv")).unwrap();
    // Header plus alpha = 2..=8.
    assert_eq!(curve.lines().count(), 8, "{curve}");
}

fn write_samples(path: &Path, n: usize, d: usize) {
    use std::fmt::Write as _;
    let mut text = String::new();
    for j in 0..d {
        if j > 0 {
            text.push(',');
        }
        let _ = write!(text, "f{j}");
    }
    text.push('\n');
    let mut state = 88172645463325252u64;
    let mut next = || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    for _ in 0..n {
        for j in 0..d {
            if j > 0 {
                text.push(',');
            }
            let _ = write!(text, "{:.12}", next());
        }
        text.push('\n');
    }
    std::fs::write(path, text).unwrap();
}

fn simulate_config(dir: &Path, seed: u64) -> PathBuf {
    let samples = dir.join("samples.csv");
    write_samples(&samples, 12, 4);
    let blocks = vec![
        SubspaceClip::with_linf_budget(2, 1.0, 2),
        SubspaceClip::l2_only(2, 0.5),
    ];
    let cfg = serde_json::json!({
        "input": samples,
        "blocks": blocks,
        "q1": 0.5,
        "q2": 0.5,
        "sigmas": [1.0, 0.6],
        "seed": seed,
        "t": 100,
        "delta": 1e-5,
    });
    let path = dir.join("sim.json");
    write_json(&path, &cfg);
    path
}

#[test]
fn simulate_is_deterministic_and_accounting_matches_epsilon() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = simulate_config(dir.path(), 11);

    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    run_ok(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_a.to_str().unwrap(),
    ]);
    run_ok(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_b.to_str().unwrap(),
    ]);
    let release_a = std::fs::read(out_a.join("release.csv")).unwrap();
    let release_b = std::fs::read(out_b.join("release.csv")).unwrap();
    assert_eq!(release_a, release_b, "same seed must reproduce the release");

    // A different seed changes the release.
    let out_c = dir.path().join("c");
    run_ok(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "99",
        "--out",
        out_c.to_str().unwrap(),
    ]);
    let release_c = std::fs::read(out_c.join("release.csv")).unwrap();
    assert_ne!(release_a, release_c);

    // Sidecar accounting equals the epsilon command on the same mechanism.
    let sidecar: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_a.join("release_meta.json")).unwrap())
            .unwrap();
    let spec = MechanismSpec {
        kind: MechanismKind::TwiceSampled,
        plan: SamplingPlan { q1: 0.5, q2: 0.5 },
        dim: 4,
        sensitivity: SensitivitySpec::Hybrid {
            blocks: vec![
                SubspaceClip::with_linf_budget(2, 1.0, 2),
                SubspaceClip::l2_only(2, 0.5),
            ],
        },
        noise: NoiseScale::PerBlock(vec![1.0, 0.6]),
    };
    let eps_cfg = epsilon_config(dir.path(), &spec, 100, 1e-5);
    let out_e = dir.path().join("e");
    run_ok(&[
        "epsilon",
        "--config",
        eps_cfg.to_str().unwrap(),
        "--out",
        out_e.to_str().unwrap(),
    ]);
    let eps_report: EpsilonFile =
        serde_json::from_str(&std::fs::read_to_string(out_e.join("epsilon.json")).unwrap())
            .unwrap();
    assert_eq!(sidecar["eps_tilde"].as_f64().unwrap(), eps_report.eps_tilde);
}

#[test]
fn compare_identical_specs_gives_unit_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let spec = MechanismSpec {
        kind: MechanismKind::InputSampled,
        plan: SamplingPlan { q1: 0.02, q2: 1.0 },
        dim: 64,
        sensitivity: SensitivitySpec::L2Ball { c2: 1.0 },
        noise: NoiseScale::Scalar(1.0),
    };
    let cfg = serde_json::json!({
        "t": 200, "delta": 1e-5, "target_eps": 3.0,
        "baseline": spec, "candidate": spec,
    });
    let path = dir.path().join("cmp.json");
    write_json(&path, &cfg);
    let out_dir = dir.path().join("out");
    let stdout = run_ok(&[
        "compare-variance",
        "--config",
        path.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(stdout.contains("variance_ratio=1"), "{stdout}");
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out_dir.join("compare_variance.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report["variance_ratio"].as_f64().unwrap(), 1.0);
}

#[test]
fn basis_outputs_are_deterministic_and_capture_planted_plane() {
    let dir = tempfile::tempdir().unwrap();
    // Rank-2 data: every sample is a combination of two fixed directions.
    let samples = dir.path().join("samples.csv");
    let mut text = String::from("a,b,c,d,e\n");
    let mut state = 4242u64;
    let mut next = || {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    for _ in 0..30 {
        let (x, y) = (next(), next());
        let row = [x, y, x, -y, x];
        text.push_str(&row.map(|v| format!("{v:.12}")).join(","));
        text.push('\n');
    }
    std::fs::write(&samples, text).unwrap();

    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        run_ok(&[
            "basis",
            "--input",
            samples.to_str().unwrap(),
            "--ranks",
            "2",
            "--power-iters",
            "50",
            "--seed",
            "7",
            "--out",
            out.to_str().unwrap(),
        ]);
    }
    assert_eq!(
        std::fs::read(out_a.join("basis.csv")).unwrap(),
        std::fs::read(out_b.join("basis.csv")).unwrap()
    );
    let stats: Vec<serde_json::Value> =
        serde_json::from_str(&std::fs::read_to_string(out_a.join("subspace_stats.json")).unwrap())
            .unwrap();
    let lead = stats[0]["mean_l2"].as_f64().unwrap();
    let tail = stats[1]["mean_l2"].as_f64().unwrap();
    assert!(
        tail < 1e-8 * lead.max(1.0),
        "residual block carries mass: {tail}"
    );
}

#[test]
fn invalid_spec_exits_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = twice_spec();
    spec.noise = NoiseScale::Scalar(-1.0);
    let cfg = epsilon_config(dir.path(), &spec, 10, 1e-5);
    let out = run(&[
        "epsilon",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn infeasible_calibration_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let spec = MechanismSpec {
        kind: MechanismKind::PureGaussian,
        plan: SamplingPlan { q1: 1.0, q2: 1.0 },
        dim: 8,
        sensitivity: SensitivitySpec::L2Ball { c2: 1.0 },
        noise: NoiseScale::Scalar(1.0),
    };
    let cfg = serde_json::json!({
        "t": 1, "delta": 1e-5, "target_eps": 1e-9,
        "baseline": spec, "candidate": spec,
    });
    let path = dir.path().join("cmp.json");
    write_json(&path, &cfg);
    let out = run(&[
        "compare-variance",
        "--config",
        path.to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn amplify_curve_orderings_hold_pointwise() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    run_ok(&[
        "amplify-curve",
        "--q",
        "0.005",
        "--q2-list",
        "0.5",
        "--d0-list",
        "16,64",
        "--alpha-list",
        "4,8",
        "--sigma-min",
        "0.5",
        "--sigma-max",
        "2.0",
        "--sigma-steps",
        "5",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    let mut reader = csv::Reader::from_path(out_dir.join("amplify_curve.csv")).unwrap();
    // (sigma, alpha, d0) -> (mechanism -> log_eps)
    let mut table: std::collections::HashMap<(String, String, String), Vec<(String, f64)>> =
        std::collections::HashMap::new();
    let mut by_mech_sigma: std::collections::HashMap<(String, String, String), Vec<(f64, f64)>> =
        std::collections::HashMap::new();
    for record in reader.records() {
        let r = record.unwrap();
        let key = (r[0].to_string(), r[2].to_string(), r[3].to_string());
        let log_eps: f64 = r[6].parse().unwrap();
        table
            .entry(key)
            .or_default()
            .push((r[1].to_string(), log_eps));
        let sigma: f64 = r[0].parse().unwrap();
        by_mech_sigma
            .entry((r[1].to_string(), r[2].to_string(), r[3].to_string()))
            .or_default()
            .push((sigma, log_eps));
    }
    assert!(!table.is_empty());
    for (key, entries) in &table {
        let get = |name: &str| {
            entries
                .iter()
                .find(|(m, _)| m == name)
                .map(|(_, v)| *v)
                .unwrap_or_else(|| panic!("missing {name} at {key:?}"))
        };
        let (coord, twice, input) = (get("coordinate"), get("twice"), get("input_wise"));
        assert!(coord <= twice + 1e-9, "{key:?}: {coord} > {twice}");
        assert!(twice <= input + 1e-9, "{key:?}: {twice} > {input}");
    }
    // log(eps) decreases monotonically in sigma for every mechanism.
    for (key, mut points) in by_mech_sigma {
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in points.windows(2) {
            assert!(
                w[1].1 <= w[0].1 + 1e-9,
                "{key:?}: log_eps not decreasing in sigma"
            );
        }
    }
}

#[test]
fn compare_with_block_optimizer_beats_flat_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let candidate = MechanismSpec {
        kind: MechanismKind::TwiceSampled,
        plan: SamplingPlan { q1: 0.05, q2: 0.5 },
        dim: 100,
        sensitivity: SensitivitySpec::Hybrid {
            blocks: vec![
                SubspaceClip::with_linf_budget(10, 2.0, 4),
                SubspaceClip::with_linf_budget(90, 0.5, 25),
            ],
        },
        noise: NoiseScale::PerBlock(vec![1.0, 1.0]),
    };
    let baseline = MechanismSpec {
        kind: MechanismKind::InputSampled,
        plan: SamplingPlan { q1: 0.025, q2: 1.0 },
        dim: 100,
        sensitivity: SensitivitySpec::L2Ball {
            c2: (4.0_f64 + 0.25).sqrt(),
        },
        noise: NoiseScale::Scalar(1.0),
    };
    let cfg = serde_json::json!({
        "t": 200, "delta": 1e-5, "target_eps": 4.0,
        "baseline": baseline, "candidate": candidate,
        "optimize_candidate_blocks": true,
    });
    let path = dir.path().join("cmp.json");
    write_json(&path, &cfg);
    let out_dir = dir.path().join("out");
    let out = Command::new(bin())
        .env("DPGEOM_ALPHA_MAX", "48")
        .args([
            "compare-variance",
            "--config",
            path.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out_dir.join("compare_variance.json")).unwrap(),
    )
    .unwrap();
    let ratio = report["variance_ratio"].as_f64().unwrap();
    assert!(ratio < 1.0, "optimized hybrid should beat the flat baseline, got {ratio}");
    assert_eq!(report["candidate"]["sigmas"].as_array().unwrap().len(), 2);
    assert!(report["candidate"]["achieved_eps"].as_f64().unwrap() <= 4.0 * (1.0 + 1e-4));
}

#[test]
fn basis_then_simulate_chain() {
    let dir = tempfile::tempdir().unwrap();
    let samples = dir.path().join("samples.csv");
    write_samples(&samples, 20, 4);
    let basis_out = dir.path().join("basis");
    run_ok(&[
        "basis",
        "--input",
        samples.to_str().unwrap(),
        "--ranks",
        "1",
        "--power-iters",
        "30",
        "--seed",
        "3",
        "--out",
        basis_out.to_str().unwrap(),
    ]);
    let cfg = serde_json::json!({
        "input": samples,
        "basis_csv": basis_out.join("basis.csv"),
        "basis_meta": basis_out.join("basis_meta.json"),
        "blocks": [
            SubspaceClip::l2_only(1, 1.5),
            SubspaceClip::with_linf_budget(3, 0.6, 3),
        ],
        "q1": 0.5, "q2": 0.5,
        "sigmas": [0.9, 0.4],
        "seed": 5, "t": 50, "delta": 1e-5,
    });
    let path = dir.path().join("sim.json");
    write_json(&path, &cfg);
    let out_dir = dir.path().join("sim");
    run_ok(&[
        "simulate",
        "--config",
        path.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    let sidecar: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out_dir.join("release_meta.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(
        sidecar["meta"]["block_ranks"],
        serde_json::json!([1, 3])
    );
    assert!(sidecar["eps_tilde"].as_f64().unwrap() > 0.0);
    let release = std::fs::read_to_string(out_dir.join("release.csv")).unwrap();
    assert_eq!(release.lines().count(), 5, "{release}");
}

#[test]
fn calibrated_sigma_keeps_simulation_accounting_under_target() {
    let dir = tempfile::tempdir().unwrap();
    // Calibrate a twice-sampled hybrid mechanism to a target budget.
    let spec = MechanismSpec {
        kind: MechanismKind::TwiceSampled,
        plan: SamplingPlan { q1: 0.5, q2: 0.5 },
        dim: 4,
        sensitivity: SensitivitySpec::Hybrid {
            blocks: vec![
                SubspaceClip::with_linf_budget(2, 1.0, 2),
                SubspaceClip::l2_only(2, 0.5),
            ],
        },
        noise: NoiseScale::PerBlock(vec![1.0, 0.5]),
    };
    let target = 3.0;
    let cfg = serde_json::json!({
        "t": 50, "delta": 1e-5, "target_eps": target,
        "baseline": spec, "candidate": spec,
    });
    let cmp_cfg = dir.path().join("cmp.json");
    write_json(&cmp_cfg, &cfg);
    let cmp_out = dir.path().join("cmp");
    run_ok(&[
        "compare-variance",
        "--config",
        cmp_cfg.to_str().unwrap(),
        "--out",
        cmp_out.to_str().unwrap(),
    ]);
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(cmp_out.join("compare_variance.json")).unwrap(),
    )
    .unwrap();
    let sigmas: Vec<f64> = report["candidate"]["sigmas"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();

    // Simulate with the calibrated sigmas; the sidecar accounting must sit
    // at or under the target.
    let samples = dir.path().join("samples.csv");
    write_samples(&samples, 12, 4);
    let sim_cfg_val = serde_json::json!({
        "input": samples,
        "blocks": [
            SubspaceClip::with_linf_budget(2, 1.0, 2),
            SubspaceClip::l2_only(2, 0.5),
        ],
        "q1": 0.5, "q2": 0.5,
        "sigmas": sigmas,
        "seed": 77, "t": 50, "delta": 1e-5,
    });
    let sim_cfg = dir.path().join("sim.json");
    write_json(&sim_cfg, &sim_cfg_val);
    let sim_out = dir.path().join("sim");
    run_ok(&[
        "simulate",
        "--config",
        sim_cfg.to_str().unwrap(),
        "--out",
        sim_out.to_str().unwrap(),
    ]);
    let sidecar: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(sim_out.join("release_meta.json")).unwrap(),
    )
    .unwrap();
    let eps = sidecar["eps_tilde"].as_f64().unwrap();
    assert!(eps <= target * (1.0 + 1e-9), "sidecar eps {eps} above target {target}");
    assert!(eps > 0.9 * target, "calibration should sit near the target, got {eps}");
}
