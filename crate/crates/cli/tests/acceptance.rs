//! Acceptance gate: one test per release criterion, each printing a PASS
//! line with the measured numbers (visible under `--nocapture`). Every
//! tolerance here is part of the published contract for this tool: the
//! reference values and bands come from the original study the embedded
//! scenario reproduces.

use std::process::Command;
use std::sync::Mutex;
use std::time::Instant;

use barriercert::certificate::{
    build_report, check_feasibility, eta_beta_ball, eta_beta_general, overlap_probability,
    CertificateMatrix, FEASIBILITY_TOL,
};
use barriercert::distributions::ScalarDistribution;
use barriercert::geometry::{ShapeKernel, UncertainSet};
use barriercert::linsys::{closed_loop, LinearSystem};
use barriercert::montecarlo::{
    dominance_violations, estimate, estimate_detailed, sweep, MonteCarloConfig, Parallelism,
    RowStatus,
};
use barriercert::repro::REFERENCE_SCENARIO_JSON;
use barriercert::scenario::{certify_scenario, parse_scenario, SweepGrid};
use barriercert::synthesis::{solve_certificate, solve_discrete_lyapunov, synthesize_gain, SynthesisConfig};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Serializes the wall-clock-budgeted criteria so parallel test execution
/// cannot inflate their timings.
static TIMING_LOCK: Mutex<()> = Mutex::new(());

fn timing_guard() -> std::sync::MutexGuard<'static, ()> {
    TIMING_LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn ball(center: Vec<f64>, size: f64, sigma: f64) -> UncertainSet {
    let dim = center.len();
    UncertainSet::new(
        DVector::from_vec(center),
        size,
        ShapeKernel::UnitBall(dim),
        ScalarDistribution::half_normal(sigma).unwrap(),
    )
    .unwrap()
}

#[test]
fn criterion_1_headline_reproduction_via_paper_repro() {
    let _guard = timing_guard();
    let start = Instant::now();
    let output = Command::new(env!("CARGO_BIN_EXE_barriercert"))
        .arg("paper-repro")
        .output()
        .expect("binary must run");
    let elapsed = start.elapsed();
    assert!(
        output.status.success(),
        "paper-repro must exit 0, got {:?}\nstderr: {}",
        output.status.code(),
        String::from_utf8_lossy(&output.stderr)
    );

    let stdout = String::from_utf8_lossy(&output.stdout);
    let tolerances = [
        ("eta", 5e-6),
        ("beta", 5e-5),
        ("c", 5e-6),
        ("safety_lower_bound", 5e-4),
    ];
    for (name, tol) in tolerances {
        let row = stdout
            .lines()
            .find(|l| l.split_whitespace().next() == Some(name))
            .unwrap_or_else(|| panic!("table must contain a {name} row:\n{stdout}"));
        let cols: Vec<&str> = row.split_whitespace().collect();
        let reference: f64 = cols[1].parse().unwrap();
        let computed: f64 = cols[2].parse().unwrap();
        assert!(
            (computed - reference).abs() <= tol,
            "{name}: computed {computed} vs reference {reference} exceeds {tol}"
        );
    }
    assert!(stdout.contains("overall: pass"), "table must report overall pass");
    assert!(
        elapsed.as_secs_f64() < 1.0,
        "paper-repro took {elapsed:?}, budget is 1 s"
    );
    println!(
        "criterion 1 (headline reproduction via paper-repro, all four quantities in tolerance): PASS in {:.0} ms",
        elapsed.as_secs_f64() * 1e3
    );
}

#[test]
fn criterion_2_monte_carlo_headline() {
    let _guard = timing_guard();
    let scenario = parse_scenario(REFERENCE_SCENARIO_JSON).unwrap();
    let bound = certify_scenario(&scenario).unwrap().report.safety_lower_bound;

    let start = Instant::now();
    let report = estimate(&scenario, &MonteCarloConfig::new(20000, 50, 42)).unwrap();
    let elapsed = start.elapsed();

    assert!(
        (0.995..=1.0).contains(&report.p_safe_empirical),
        "empirical safety {} outside [0.995, 1.0]",
        report.p_safe_empirical
    );
    assert!(
        report.ci_high >= bound,
        "CI upper edge {} fell below the analytic bound {bound}",
        report.ci_high
    );
    assert!(
        elapsed.as_secs_f64() < 30.0,
        "20000-trajectory run took {elapsed:?}, budget is 30 s"
    );
    println!(
        "criterion 2 (Monte Carlo headline: empirical {:.4} in [0.995, 1.0], ci_high {:.4} >= bound {:.4}): PASS in {:.0} ms",
        report.p_safe_empirical,
        report.ci_high,
        bound,
        elapsed.as_secs_f64() * 1e3
    );
}

#[test]
fn criterion_3_dominance_sweep_and_nominal_anchors() {
    let _guard = timing_guard();
    let scenario = parse_scenario(REFERENCE_SCENARIO_JSON).unwrap();
    let grid = scenario.sweep.clone().expect("reference scenario carries the sweep grid");
    assert_eq!(
        grid.sigma_w.len() * grid.sigma_i.len() * grid.sigma_u.len(),
        150,
        "the published sweep grid has 150 points"
    );

    let start = Instant::now();
    let rows = sweep(&scenario, &grid, &MonteCarloConfig::new(2000, 50, 42)).unwrap();
    assert_eq!(rows.len(), 150);
    let violations = dominance_violations(&rows, 0.001);
    assert!(
        violations.is_empty(),
        "dominance violations at row indices {violations:?}"
    );
    let valid = rows.iter().filter(|r| r.status == RowStatus::Valid).count();
    assert!(valid > 0, "the sweep must contain valid-certificate rows");

    // Nominal-set reference points: zero set perturbation, five process-noise
    // scales, published bounds to match within +/-0.01 at 20000 samples.
    let anchors = [
        (0.01, 0.991),
        (0.05, 0.979),
        (0.1, 0.943),
        (0.15, 0.882),
        (0.2, 0.7973),
    ];
    for (sigma_w, anchor) in anchors {
        let point = SweepGrid {
            sigma_w: vec![sigma_w],
            sigma_i: vec![0.0],
            sigma_u: vec![0.0],
            samples: None,
        };
        let row = sweep(&scenario, &point, &MonteCarloConfig::new(20000, 50, 42))
            .unwrap()
            .pop()
            .unwrap();
        assert_eq!(row.status, RowStatus::Valid);
        assert!(
            (row.bound - anchor).abs() <= 0.01,
            "bound {} at sigma_w {sigma_w} misses the reference point {anchor}",
            row.bound
        );
        assert!(
            row.ci_high >= row.bound - 0.001,
            "empirical CI fell below the bound at the sigma_w {sigma_w} reference point"
        );
    }
    let elapsed = start.elapsed();
    assert!(
        elapsed.as_secs_f64() < 600.0,
        "sweep took {elapsed:?}, budget is 10 min"
    );
    println!(
        "criterion 3 (150-point dominance sweep, {valid} valid rows, 0 violations; five nominal anchors within 0.01): PASS in {:.1} s",
        elapsed.as_secs_f64()
    );
}

#[test]
fn criterion_4_closed_form_matches_quadrature() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC4);
    let mut worst = 0.0f64;
    for i in 0..50 {
        let sigma_i = rng.gen_range(0.05..1.0);
        let sigma_u = rng.gen_range(0.05..1.0);
        let init_size = rng.gen_range(0.1..0.8);
        let unsafe_size = rng.gen_range(0.2..1.0);
        let cx: f64 = rng.gen_range(-1.0..1.0);
        let cy: f64 = rng.gen_range(-1.0..1.0);
        let dist = unsafe_size + 5.0 * sigma_u + rng.gen_range(0.5..4.0);
        let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let init = ball(vec![cx, cy], init_size, sigma_i);
        let unsafe_set = ball(
            vec![dist * angle.cos(), dist * angle.sin()],
            unsafe_size,
            sigma_u,
        );
        let p = CertificateMatrix::new(
            DMatrix::from_diagonal(&DVector::from_vec(vec![
                rng.gen_range(0.005..0.05),
                rng.gen_range(0.005..0.05),
            ])),
            DMatrix::from_diagonal(&DVector::from_vec(vec![1e-6, 1e-6])),
        )
        .unwrap();
        let p_empty = rng.gen_range(0.9..1.0);

        let (eta_b, beta_b, _) = eta_beta_ball(&init, &unsafe_set, &p, p_empty).unwrap();
        let (eta_g, beta_g, _) = eta_beta_general(&init, &unsafe_set, &p, p_empty).unwrap();
        let rel_eta = ((eta_b - eta_g) / eta_g).abs();
        let rel_beta = ((beta_b - beta_g) / beta_g).abs();
        assert!(
            rel_eta <= 1e-6 && rel_beta <= 1e-6,
            "config {i}: relative differences eta {rel_eta:.3e}, beta {rel_beta:.3e} exceed 1e-6"
        );
        worst = worst.max(rel_eta).max(rel_beta);
    }
    println!(
        "criterion 4 (closed form vs quadrature on 50 random ball configs, worst relative difference {worst:.2e} <= 1e-6): PASS"
    );
}

#[test]
fn criterion_5_overlap_probability_matches_paired_oracle() {
    // Ten configurations spanning overlap probabilities from 1e-3 to 0.9;
    // the gap values put the sum law's tail mass exactly on those levels.
    let configs: [(f64, f64, f64); 10] = [
        (1.0, 1.0, 0.576039),
        (1.0, 1.0, 0.953873),
        (1.0, 1.0, 1.274323),
        (1.0, 1.0, 1.598384),
        (0.5, 1.5, 1.984636),
        (1.0, 1.0, 2.492043),
        (1.0, 1.0, 3.162856),
        (0.5, 1.5, 4.351578),
        (1.0, 1.0, 4.489372),
        (1.0, 1.0, 4.922438),
    ];

    let mut lib_values = Vec::new();
    for &(sigma_i, sigma_u, gap) in &configs {
        let init = ball(vec![0.0, 0.0], 0.3, sigma_i);
        let unsafe_set = ball(vec![gap + 0.8, 0.0], 0.5, sigma_u);
        let (p_overlap, _) = overlap_probability(&init, &unsafe_set).unwrap();
        lib_values.push(p_overlap);
    }
    let lo = lib_values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = lib_values.iter().cloned().fold(0.0, f64::max);
    assert!(
        (0.8e-3..=1.2e-3).contains(&lo) && hi >= 0.89,
        "configurations must span overlap probabilities 1e-3 to 0.9, got [{lo:.2e}, {hi:.3}]"
    );

    // Paired-draw oracle: one common stream of half-normal pairs, every
    // configuration scored against the same draws.
    const N: u64 = 10_000_000;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut hits = [0u64; 10];
    for _ in 0..N {
        let a1 = rng.sample::<f64, _>(StandardNormal).abs();
        let a2 = rng.sample::<f64, _>(StandardNormal).abs();
        for (j, &(sigma_i, sigma_u, gap)) in configs.iter().enumerate() {
            if sigma_i * a1 + sigma_u * a2 > gap {
                hits[j] += 1;
            }
        }
    }

    let mut worst = 0.0f64;
    for (j, &lib) in lib_values.iter().enumerate() {
        let mc = hits[j] as f64 / N as f64;
        let diff = (mc - lib).abs();
        assert!(
            diff <= 2e-4,
            "config {j}: library {lib:.6} vs oracle {mc:.6} differs by {diff:.2e} > 2e-4"
        );
        worst = worst.max(diff);
    }
    println!(
        "criterion 5 (overlap probability vs 1e7-sample paired oracle on 10 configs, worst |diff| {worst:.2e} <= 2e-4): PASS"
    );
}

#[test]
fn criterion_6_certificate_soundness() {
    // Scale invariance: levels scale linearly, the bound is bitwise fixed.
    let scenario = parse_scenario(REFERENCE_SCENARIO_JSON).unwrap();
    let certified = certify_scenario(&scenario).unwrap();
    let base = &certified.report;
    for k in [-3i32, -1, 1, 7] {
        let alpha = 2.0f64.powi(k);
        let scaled = certified.certificate.scaled(alpha).unwrap();
        let report = build_report(
            &certified.a_cl,
            &certified.augmented,
            &scaled,
            &scenario.init_set,
            &scenario.unsafe_set,
            scenario.horizon,
        )
        .unwrap();
        assert_eq!(report.eta, alpha * base.eta);
        assert_eq!(report.beta, alpha * base.beta);
        assert_eq!(report.c, alpha * base.c);
        assert_eq!(
            report.safety_lower_bound, base.safety_lower_bound,
            "bound must be exactly invariant under P <- {alpha} P"
        );
    }

    // Supermartingale sample check: the mean barrier increment along
    // simulated trajectories stays within three standard errors of c.
    let out = estimate_detailed(
        &scenario,
        &MonteCarloConfig::new(2000, 50, 42),
        false,
        Some(&certified.certificate),
    )
    .unwrap();
    let drift = out.drift.expect("drift statistics were requested");
    assert!(drift.transitions > 0);
    assert!(
        drift.mean_increment <= base.c + 3.0 * drift.stderr,
        "mean increment {} exceeds c {} + 3 stderr {}",
        drift.mean_increment,
        base.c,
        drift.stderr
    );

    // Synthesized gain/certificate pairs stay feasible, and the Lyapunov
    // solver's residual is at machine level.
    let cfg = SynthesisConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0x51);
    let mut worst_margin = f64::NEG_INFINITY;
    let mut worst_residual = 0.0f64;
    for _ in 0..20 {
        let a = DMatrix::from_fn(2, 2, |_, _| rng.gen_range(-1.2..1.2));
        let sys = LinearSystem::new(a, DMatrix::identity(2, 2), 0.1).unwrap();
        let gain = synthesize_gain(&sys, &cfg).unwrap();
        let a_cl = closed_loop(&sys, &gain).unwrap();
        let p_x = solve_certificate(&a_cl, &cfg).unwrap();
        let p = CertificateMatrix::new(
            p_x,
            DMatrix::from_diagonal(&DVector::from_vec(vec![1e-6, 1e-6])),
        )
        .unwrap();
        let margin = check_feasibility(&a_cl, &p, FEASIBILITY_TOL).unwrap();
        assert!(
            margin <= 1e-9,
            "synthesized pair has contraction margin {margin} > 1e-9"
        );
        worst_margin = worst_margin.max(margin);

        let m = DMatrix::from_fn(2, 2, |_, _| rng.gen_range(-1.0..1.0));
        let q = &m * m.transpose() + DMatrix::identity(2, 2) * 0.1;
        let x = solve_discrete_lyapunov(&a_cl, &q).unwrap();
        let residual = (a_cl.transpose() * &x * &a_cl - &x + &q).norm() / x.norm();
        assert!(
            residual <= 1e-8,
            "Lyapunov residual {residual:.3e} exceeds 1e-8 relative"
        );
        worst_residual = worst_residual.max(residual);
    }
    println!(
        "criterion 6 (exact scale invariance; drift {:.2e} <= c + 3 stderr; 20 synthesized pairs worst margin {:.2e} <= 1e-9, worst Lyapunov residual {:.2e} <= 1e-8): PASS",
        drift.mean_increment, worst_margin, worst_residual
    );
}

#[test]
fn criterion_7_estimate_is_parallelism_invariant() {
    let reference = parse_scenario(REFERENCE_SCENARIO_JSON).unwrap();

    let mut synthesized = reference.clone();
    synthesized.label = "synthesized-variant".into();
    synthesized.gain = None;
    synthesized.certificate = None;

    let overlapping = parse_scenario(
        r#"{
          "label": "overlapping-sets",
          "system": { "a": [[0.9, 0.0], [0.0, 0.9]], "b": [[1.0, 0.0], [0.0, 1.0]], "sigma_w": 0.15 },
          "gain": { "l": [[0.0, 0.0], [0.0, 0.0]] },
          "init_set": {
            "center": [2.7, 2.7], "size": 0.5,
            "kernel": { "type": "ball" },
            "perturbation": { "type": "half_normal", "sigma": 0.3 }
          },
          "unsafe_set": {
            "center": [3.0, 3.0], "size": 1.0,
            "kernel": { "type": "ball" },
            "perturbation": { "type": "half_normal", "sigma": 0.5 }
          },
          "horizon": 50
        }"#,
    )
    .unwrap();

    for scenario in [&reference, &synthesized, &overlapping] {
        let mut reports = Vec::new();
        for parallelism in [Parallelism::Off, Parallelism::Auto, Parallelism::Fixed(2)] {
            let mut cfg = MonteCarloConfig::new(2000, 50, 42);
            cfg.parallelism = parallelism;
            reports.push(estimate(scenario, &cfg).unwrap());
        }
        assert_eq!(
            reports[0], reports[1],
            "{}: serial vs auto reports differ",
            scenario.label
        );
        assert_eq!(
            reports[1], reports[2],
            "{}: auto vs fixed-width reports differ",
            scenario.label
        );
    }
    println!(
        "criterion 7 (estimate bit-identical across Off/Auto/Fixed parallelism on 3 scenarios): PASS"
    );
}
