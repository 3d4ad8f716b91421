//! Seeded Monte Carlo oracle for the analytic safety bound.
//!
//! Trajectories of the closed loop are simulated exactly as the model
//! states: the initial-set perturbation is drawn once per trajectory, the
//! start state uniformly from the realized initial set, and at every step
//! `k = 0..=T` a fresh unsafe-set perturbation is drawn and membership is
//! tested *before* the state advances. The run is reproducible and order
//! independent: trajectory `i` uses stream `i` of a counter-based generator
//! seeded with the master seed, and results are aggregated by a sequential
//! fold over trajectory index, so every parallelism setting produces
//! bit-identical reports.
//!
//! A parameter sweep re-certifies and re-simulates a scenario over grids of
//! the three noise scales and tags each row with a validity status, so that
//! rows whose closed-form level constants are unsound (the unsafe-set
//! perturbation tail reaches past the nominal gap) are excluded from
//! dominance checks.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::certificate::CertificateMatrix;
use crate::distributions::ScalarDistribution;
use crate::geometry::{contains, d_unsafe_min, sample_uniform, UncertainSet};
use crate::scenario::{certify_scenario, resolve_closed_loop, Scenario, SweepGrid};
use crate::{Error, Result};

/// Normal quantile for the 95% two-sided confidence interval.
const CI_Z: f64 = 1.959963984540054;

/// Redraw budget for [`OverlapPolicy::ResampleSeparated`] before an
/// overlapping start is conceded as an unsafe hit at step 0.
const RESAMPLE_CAP: u32 = 1000;

/// What to do with trajectories whose initial draw lands inside the
/// realized unsafe set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OverlapPolicy {
    /// Count the trajectory as unsafe at step 0 (the conservative default,
    /// matching the convention under which the analytic bound is stated).
    #[default]
    CountUnsafe,
    /// Redraw the initial-set perturbation, start state, and step-0
    /// unsafe-set perturbation until they are separated, so the estimate
    /// conditions on a non-overlapping start.
    ResampleSeparated,
}

/// Worker configuration for the estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Parallelism {
    /// Use the global thread pool (one worker per core).
    #[default]
    Auto,
    /// Use a dedicated pool with exactly this many workers.
    Fixed(usize),
    /// Simulate on the calling thread.
    Off,
}

/// Inputs of a Monte Carlo run.
#[derive(Debug, Clone, Copy)]
pub struct MonteCarloConfig {
    /// Number of independent trajectories.
    pub num_trajectories: u64,
    /// Steps per trajectory; membership is tested at steps `0..=horizon`.
    pub horizon: u32,
    /// Master seed; trajectory `i` uses stream `i` derived from it.
    pub master_seed: u64,
    /// Treatment of overlapping starts.
    pub overlap_policy: OverlapPolicy,
    /// Worker configuration.
    pub parallelism: Parallelism,
}

impl MonteCarloConfig {
    /// Configuration with the default overlap policy and parallelism.
    pub fn new(num_trajectories: u64, horizon: u32, master_seed: u64) -> Self {
        Self {
            num_trajectories,
            horizon,
            master_seed,
            overlap_policy: OverlapPolicy::default(),
            parallelism: Parallelism::default(),
        }
    }
}

/// Aggregated result of a Monte Carlo run.
#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloReport {
    /// Trajectories simulated.
    pub samples: u64,
    /// Master seed the run was derived from.
    pub master_seed: u64,
    /// Trajectories that entered the realized unsafe set at some step.
    pub unsafe_hits: u64,
    /// Initial draws that landed inside the realized unsafe set (every
    /// redraw event counts once under the resampling policy).
    pub start_overlaps: u64,
    /// `1 - unsafe_hits / samples`.
    pub p_safe_empirical: f64,
    /// Lower edge of the 95% Wald interval, clipped to `[0, 1]`.
    pub ci_low: f64,
    /// Upper edge of the 95% Wald interval, clipped to `[0, 1]`.
    pub ci_high: f64,
    /// `first_hit_histogram[k]` counts trajectories whose first unsafe hit
    /// happened at step `k`; length `horizon + 1`.
    pub first_hit_histogram: Vec<u64>,
    /// Path the trajectory dump was written to, when one was requested.
    pub trajectory_dump: Option<String>,
}

/// One recorded step of a trajectory.
#[derive(Debug, Clone)]
pub struct StepRecord {
    /// State at the step.
    pub x: DVector<f64>,
    /// Unsafe-set perturbation drawn for the step.
    pub theta_u: f64,
    /// Whether the state was inside the realized unsafe set.
    pub in_unsafe: bool,
}

/// Full record of one trajectory (only kept when paths are requested).
#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    /// Initial-set perturbation drawn for the trajectory.
    pub theta_i: f64,
    /// One record per step `0..=horizon`.
    pub steps: Vec<StepRecord>,
}

/// Outcome of a single simulated trajectory.
#[derive(Debug, Clone)]
pub struct TrajectoryOutcome {
    /// Whether the trajectory entered the realized unsafe set.
    pub hit: bool,
    /// Step of the first hit, when there was one.
    pub first_hit_step: Option<u32>,
    /// Initial draws that overlapped the realized unsafe set.
    pub start_overlaps: u64,
    /// Initial-set perturbation in effect.
    pub theta_i: f64,
    /// Sum, sum of squares, and count of per-transition barrier increments
    /// (present when a certificate was supplied for drift accounting).
    pub drift: Option<(f64, f64, u64)>,
    /// Recorded path (present when requested; always spans the full
    /// horizon even past the first hit, so dumps have fixed row counts).
    pub path: Option<TrajectoryRecord>,
}

/// Sample statistics of the per-transition barrier increments
/// `B(z_{k+1}) - B(z_k)` pooled over every simulated transition.
#[derive(Debug, Clone, Copy)]
pub struct DriftStats {
    /// Transitions pooled.
    pub transitions: u64,
    /// Sample mean of the increment.
    pub mean_increment: f64,
    /// Standard error of the mean.
    pub stderr: f64,
}

/// Report plus the optional extras of a detailed run.
#[derive(Debug, Clone)]
pub struct EstimateOutput {
    /// The standard aggregated report.
    pub report: MonteCarloReport,
    /// Drift statistics, when a certificate was supplied.
    pub drift: Option<DriftStats>,
    /// Per-trajectory records, when paths were requested.
    pub records: Option<Vec<TrajectoryRecord>>,
}

fn barrier_value(
    p: &CertificateMatrix,
    x: &DVector<f64>,
    theta_i: f64,
    theta_u: f64,
) -> f64 {
    let px = p.p_x();
    let mut quad = 0.0;
    for i in 0..px.nrows() {
        for j in 0..px.ncols() {
            quad += x[i] * px[(i, j)] * x[j];
        }
    }
    let pt = p.p_theta();
    quad + pt[(0, 0)] * theta_i * theta_i + pt[(1, 1)] * theta_u * theta_u
        + (pt[(0, 1)] + pt[(1, 0)]) * theta_i * theta_u
}

/// Simulates one trajectory of the closed loop on the given random stream.
///
/// Draw order is fixed: the initial-set perturbation, then the start state
/// (uniform over the realized initial set), then per step `k = 0..=T` the
/// unsafe-set perturbation followed by the membership test; the state
/// advances between tests with fresh process noise. Early exit at the
/// first hit is taken unless a path is being recorded, and never changes
/// the outcome because each trajectory owns its stream.
pub fn run_trajectory(
    scenario: &Scenario,
    a_cl: &DMatrix<f64>,
    rng: &mut ChaCha8Rng,
    policy: OverlapPolicy,
    record_path: bool,
    drift_for: Option<&CertificateMatrix>,
) -> Result<TrajectoryOutcome> {
    let n = scenario.system.state_dim();
    let sigma_w = scenario.system.sigma_w();
    let init = &scenario.init_set;
    let unsafe_set = &scenario.unsafe_set;
    let horizon = scenario.horizon;

    let draw_start = |rng: &mut ChaCha8Rng| -> Result<(f64, DVector<f64>, f64)> {
        let theta_i = init.perturbation().sample(rng);
        let x0 = sample_uniform(init, theta_i, rng).ok_or_else(|| {
            Error::UnsupportedConfiguration(
                "could not draw a start state from the realized initial set \
                 (degenerate size or exhausted rejection budget)"
                    .into(),
            )
        })?;
        let theta_u0 = unsafe_set.perturbation().sample(rng);
        Ok((theta_i, x0, theta_u0))
    };

    let mut start_overlaps = 0u64;
    let (theta_i, mut x, mut theta_u) = {
        let (mut ti, mut x0, mut tu) = draw_start(rng)?;
        if matches!(policy, OverlapPolicy::ResampleSeparated) {
            let mut tries = 0u32;
            while contains(unsafe_set, tu, &x0) && tries < RESAMPLE_CAP {
                start_overlaps += 1;
                let redrawn = draw_start(rng)?;
                ti = redrawn.0;
                x0 = redrawn.1;
                tu = redrawn.2;
                tries += 1;
            }
        }
        (ti, x0, tu)
    };

    let mut hit = false;
    let mut first_hit_step = None;
    let mut in_now = contains(unsafe_set, theta_u, &x);
    if in_now {
        hit = true;
        first_hit_step = Some(0);
        if matches!(policy, OverlapPolicy::CountUnsafe) {
            start_overlaps += 1;
        }
    }

    let mut drift_acc = drift_for.map(|_| (0.0f64, 0.0f64, 0u64));
    let mut b_prev = drift_for.map(|p| barrier_value(p, &x, theta_i, theta_u));

    let mut path = record_path.then(|| TrajectoryRecord {
        theta_i,
        steps: Vec::with_capacity(horizon as usize + 1),
    });
    if let Some(p) = path.as_mut() {
        p.steps.push(StepRecord {
            x: x.clone(),
            theta_u,
            in_unsafe: in_now,
        });
    }

    let needs_full_run = record_path || drift_for.is_some();
    if !(hit && !needs_full_run) {
        let mut w = DVector::zeros(n);
        let mut x_next = DVector::zeros(n);
        for k in 1..=horizon {
            for j in 0..n {
                w[j] = sigma_w * rng.sample::<f64, _>(rand_distr::StandardNormal);
            }
            x_next.gemv(1.0, a_cl, &x, 0.0);
            x_next += &w;
            std::mem::swap(&mut x, &mut x_next);
            theta_u = unsafe_set.perturbation().sample(rng);

            if let (Some(p), Some(acc), Some(prev)) =
                (drift_for, drift_acc.as_mut(), b_prev.as_mut())
            {
                let b_now = barrier_value(p, &x, theta_i, theta_u);
                let inc = b_now - *prev;
                acc.0 += inc;
                acc.1 += inc * inc;
                acc.2 += 1;
                *prev = b_now;
            }

            in_now = contains(unsafe_set, theta_u, &x);
            if let Some(p) = path.as_mut() {
                p.steps.push(StepRecord {
                    x: x.clone(),
                    theta_u,
                    in_unsafe: in_now,
                });
            }
            if in_now && !hit {
                hit = true;
                first_hit_step = Some(k);
                if !needs_full_run {
                    break;
                }
            }
        }
    }

    Ok(TrajectoryOutcome {
        hit,
        first_hit_step,
        start_overlaps,
        theta_i,
        drift: drift_acc,
        path,
    })
}

fn validate_config(cfg: &MonteCarloConfig) -> Result<()> {
    if cfg.num_trajectories == 0 {
        return Err(Error::Validation {
            path: "num_trajectories".into(),
            reason: "at least one trajectory is required".into(),
        });
    }
    if cfg.horizon == 0 {
        return Err(Error::Validation {
            path: "horizon".into(),
            reason: "horizon must be a positive integer".into(),
        });
    }
    if matches!(cfg.parallelism, Parallelism::Fixed(0)) {
        return Err(Error::Validation {
            path: "parallelism".into(),
            reason: "a fixed worker pool needs at least one worker".into(),
        });
    }
    Ok(())
}

/// Runs the estimator and returns the aggregated report.
pub fn estimate(scenario: &Scenario, cfg: &MonteCarloConfig) -> Result<MonteCarloReport> {
    Ok(estimate_detailed(scenario, cfg, false, None)?.report)
}

/// Runs the estimator, optionally recording full paths and/or pooling
/// barrier-increment statistics against a certificate.
///
/// Trajectory `i` draws from stream `i` of a counter-based generator
/// seeded with the master seed; aggregation is a sequential fold over the
/// index-ordered outcomes, so the report is bit-identical for every
/// [`Parallelism`] setting.
pub fn estimate_detailed(
    scenario: &Scenario,
    cfg: &MonteCarloConfig,
    record_paths: bool,
    drift_for: Option<&CertificateMatrix>,
) -> Result<EstimateOutput> {
    validate_config(cfg)?;
    let mut sim_scenario = scenario.clone();
    sim_scenario.horizon = cfg.horizon;
    let (_, a_cl) = resolve_closed_loop(&sim_scenario)?;

    let simulate = |index: u64| -> Result<TrajectoryOutcome> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.master_seed);
        rng.set_stream(index);
        run_trajectory(
            &sim_scenario,
            &a_cl,
            &mut rng,
            cfg.overlap_policy,
            record_paths,
            drift_for,
        )
    };

    let outcomes: Vec<TrajectoryOutcome> = match cfg.parallelism {
        Parallelism::Off => (0..cfg.num_trajectories)
            .map(simulate)
            .collect::<Result<_>>()?,
        Parallelism::Auto => (0..cfg.num_trajectories)
            .into_par_iter()
            .map(simulate)
            .collect::<std::result::Result<_, _>>()?,
        Parallelism::Fixed(workers) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .map_err(|e| {
                    Error::UnsupportedConfiguration(format!("worker pool creation failed: {e}"))
                })?;
            pool.install(|| {
                (0..cfg.num_trajectories)
                    .into_par_iter()
                    .map(simulate)
                    .collect::<std::result::Result<_, _>>()
            })?
        }
    };

    let mut unsafe_hits = 0u64;
    let mut start_overlaps = 0u64;
    let mut first_hit_histogram = vec![0u64; cfg.horizon as usize + 1];
    let mut drift_sum = 0.0f64;
    let mut drift_sumsq = 0.0f64;
    let mut drift_count = 0u64;
    let mut records = record_paths.then(|| Vec::with_capacity(outcomes.len()));
    for outcome in outcomes {
        if outcome.hit {
            unsafe_hits += 1;
        }
        if let Some(k) = outcome.first_hit_step {
            first_hit_histogram[k as usize] += 1;
        }
        start_overlaps += outcome.start_overlaps;
        if let Some((s, s2, m)) = outcome.drift {
            drift_sum += s;
            drift_sumsq += s2;
            drift_count += m;
        }
        if let (Some(rs), Some(p)) = (records.as_mut(), outcome.path) {
            rs.push(p);
        }
    }

    let samples = cfg.num_trajectories;
    let p_hat = 1.0 - unsafe_hits as f64 / samples as f64;
    let stderr = (p_hat * (1.0 - p_hat) / samples as f64).sqrt();
    let report = MonteCarloReport {
        samples,
        master_seed: cfg.master_seed,
        unsafe_hits,
        start_overlaps,
        p_safe_empirical: p_hat,
        ci_low: (p_hat - CI_Z * stderr).max(0.0),
        ci_high: (p_hat + CI_Z * stderr).min(1.0),
        first_hit_histogram,
        trajectory_dump: None,
    };
    let drift = drift_for.and_then(|_| {
        (drift_count > 0).then(|| {
            let mean = drift_sum / drift_count as f64;
            let var = (drift_sumsq / drift_count as f64 - mean * mean).max(0.0);
            DriftStats {
                transitions: drift_count,
                mean_increment: mean,
                stderr: (var / drift_count as f64).sqrt(),
            }
        })
    });
    Ok(EstimateOutput {
        report,
        drift,
        records,
    })
}

/// Formats recorded trajectories as CSV with columns
/// `trajectory_id,k,x1..xn,theta_i,theta_u_k,in_unsafe`; every trajectory
/// contributes exactly `horizon + 1` rows.
pub fn format_trajectory_csv(records: &[TrajectoryRecord], state_dim: usize) -> String {
    let mut out = String::from("trajectory_id,k");
    for j in 1..=state_dim {
        out.push_str(&format!(",x{j}"));
    }
    out.push_str(",theta_i,theta_u_k,in_unsafe\n");
    for (id, rec) in records.iter().enumerate() {
        for (k, step) in rec.steps.iter().enumerate() {
            out.push_str(&format!("{id},{k}"));
            for j in 0..state_dim {
                out.push_str(&format!(",{:.8e}", step.x[j]));
            }
            out.push_str(&format!(
                ",{:.8e},{:.8e},{}\n",
                rec.theta_i, step.theta_u, step.in_unsafe
            ));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Parameter sweep
// ---------------------------------------------------------------------------

/// Validity tag of one sweep row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowStatus {
    /// The certificate is valid and the closed-form levels are sound.
    Valid,
    /// The certificate is valid but the bound clamped to zero.
    Vacuous,
    /// The certificate failed a validity condition, or the unsafe-set
    /// perturbation tail reaches past the nominal gap so the closed-form
    /// level on the unsafe set is not a sound infimum.
    Invalid,
}

impl std::fmt::Display for RowStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RowStatus::Valid => "valid",
            RowStatus::Vacuous => "vacuous",
            RowStatus::Invalid => "invalid",
        })
    }
}

/// One grid point of a sweep: the three scales, the analytic quantities,
/// the empirical estimate, and the row status.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    /// Process-noise scale of the row.
    pub sigma_w: f64,
    /// Initial-set perturbation scale of the row.
    pub sigma_i: f64,
    /// Unsafe-set perturbation scale of the row.
    pub sigma_u: f64,
    /// Probability that the realized sets are disjoint.
    pub p_empty: f64,
    /// Initial-set level constant.
    pub eta: f64,
    /// Unsafe-set level constant.
    pub beta: f64,
    /// Expected per-step barrier growth.
    pub c: f64,
    /// Analytic safety lower bound.
    pub bound: f64,
    /// Empirical safety probability.
    pub empirical: f64,
    /// Lower edge of the 95% interval.
    pub ci_low: f64,
    /// Upper edge of the 95% interval.
    pub ci_high: f64,
    /// Validity tag.
    pub status: RowStatus,
}

/// Whether the unsafe-set perturbation tail reaches the nominal gap. When
/// it does, the truncated-tail integration of the squared unsafe distance
/// would clamp at zero somewhere in its domain, so the closed-form level
/// constant on the unsafe set is optimistic and the row must not take part
/// in dominance checks.
fn tail_reaches_gap(unsafe_set: &UncertainSet) -> Result<bool> {
    let (gap, clamped) = d_unsafe_min(unsafe_set, 0.0)?;
    if clamped {
        return Ok(true);
    }
    Ok(unsafe_set.perturbation().quad_range().1 >= gap)
}

fn with_scales(base: &Scenario, sigma_w: f64, sigma_i: f64, sigma_u: f64) -> Result<Scenario> {
    let mut s = base.clone();
    s.system = crate::linsys::LinearSystem::new(
        base.system.a().clone(),
        base.system.b().clone(),
        sigma_w,
    )?;
    s.init_set = UncertainSet::new(
        base.init_set.center().clone(),
        base.init_set.nominal_size(),
        base.init_set.kernel().clone(),
        ScalarDistribution::half_normal_or_zero(sigma_i)?,
    )?;
    s.unsafe_set = UncertainSet::new(
        base.unsafe_set.center().clone(),
        base.unsafe_set.nominal_size(),
        base.unsafe_set.kernel().clone(),
        ScalarDistribution::half_normal_or_zero(sigma_u)?,
    )?;
    Ok(s)
}

/// Certifies and simulates the scenario at every point of the grid
/// (row-major over `sigma_w`, then `sigma_i`, then `sigma_u`). Every row
/// reuses the same master seed and stream derivation as [`estimate`], so a
/// singleton grid reproduces a standalone run exactly. Certificates whose
/// scale policy depends on the initial-set perturbation are re-derived per
/// row.
pub fn sweep(
    base: &Scenario,
    grid: &SweepGrid,
    cfg: &MonteCarloConfig,
) -> Result<Vec<SweepRow>> {
    validate_config(cfg)?;
    let mut rows = Vec::with_capacity(grid.sigma_w.len() * grid.sigma_i.len() * grid.sigma_u.len());
    for &sigma_w in &grid.sigma_w {
        for &sigma_i in &grid.sigma_i {
            for &sigma_u in &grid.sigma_u {
                let variant = with_scales(base, sigma_w, sigma_i, sigma_u)?;
                let certified = certify_scenario(&variant)?;
                let mc = estimate(&variant, cfg)?;
                let status = if !certified.report.valid {
                    RowStatus::Invalid
                } else if tail_reaches_gap(&variant.unsafe_set)? {
                    RowStatus::Invalid
                } else if certified.report.safety_lower_bound == 0.0 {
                    RowStatus::Vacuous
                } else {
                    RowStatus::Valid
                };
                rows.push(SweepRow {
                    sigma_w,
                    sigma_i,
                    sigma_u,
                    p_empty: certified.report.p_empty,
                    eta: certified.report.eta,
                    beta: certified.report.beta,
                    c: certified.report.c,
                    bound: certified.report.safety_lower_bound,
                    empirical: mc.p_safe_empirical,
                    ci_low: mc.ci_low,
                    ci_high: mc.ci_high,
                    status,
                });
            }
        }
    }
    Ok(rows)
}

/// Indices of rows that break the dominance requirement: a row counts only
/// when its certificate is sound (status not invalid) and fails when the
/// upper interval edge falls below `bound - slack`.
pub fn dominance_violations(rows: &[SweepRow], slack: f64) -> Vec<usize> {
    rows.iter()
        .enumerate()
        .filter(|(_, r)| r.status != RowStatus::Invalid && r.ci_high < r.bound - slack)
        .map(|(i, _)| i)
        .collect()
}
