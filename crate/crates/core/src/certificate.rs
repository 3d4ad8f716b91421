//! Quadratic safety certificates on the augmented state space.
//!
//! A certificate is a block-diagonal positive-definite matrix `P =
//! diag(P_x, P_theta)` defining the barrier `B(z) = z' P z` over the
//! augmented state `z = (x, theta_i, theta_u)`. This module computes the
//! three certificate constants
//!
//! * `eta`  — upper bound on the perturbation-averaged barrier over the
//!   uncertain initial set,
//! * `beta` — lower bound on the perturbation-averaged barrier over the
//!   uncertain unsafe set,
//! * `c`    — one-step expected barrier increase under process noise and
//!   perturbation refresh,
//!
//! together with the probability `p_empty` that the two uncertain sets do
//! not overlap, the contraction margin `lambda_max(A_cl' P_x A_cl - P_x)`,
//! and the resulting safety lower bound `max(0, 1 - (eta + c T) / beta)`
//! over a horizon of `T` steps.
//!
//! Two evaluation paths produce `eta` and `beta`: closed forms for
//! unit-ball sets with half-normal size perturbations, and Gauss-Legendre
//! quadrature of the squared extremal distances for general kernels and
//! laws. The closed forms silently assume the unsafe set never reaches the
//! origin; the quadrature path detects that situation and flags the
//! certificate as unsound instead of returning an optimistic `beta`.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{sum_cdf, ScalarDistribution};
use crate::geometry::{d_init_max, d_unsafe_min, gauge_distance, sample_uniform, ShapeKernel, UncertainSet};
use crate::linsys::AugmentedSystem;
use crate::{Error, Result};

/// Default tolerance on the contraction margin: the certificate condition
/// `A_cl' P_x A_cl - P_x <= 0` is accepted up to this eigenvalue slack, and
/// positive definiteness of the certificate blocks requires eigenvalues
/// strictly above it.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// Gauss-Legendre node count for the perturbation integrals. Chosen so the
/// quadrature path agrees with the unit-ball closed forms to better than
/// 1e-6 relative on half-normal laws.
pub const QUAD_NODES: usize = 128;

/// Sample count for the statistical certificate checks on unit-ball sets.
const VALIDATE_SAMPLES: usize = 10_000;
/// Sample count when a set needs rejection sampling or a direction search
/// per draw; keeps the check affordable for oracle kernels.
const VALIDATE_SAMPLES_ORACLE: usize = 500;
const VALIDATE_SEED: u64 = 0xcbc_5eed;
/// Block-diagonal certificate matrix `P = diag(P_x, P_theta)`.
///
/// `P_x` acts on the physical state, `P_theta` on the two scalar
/// perturbation coordinates. Both blocks are validated symmetric (within
/// 1e-9 relative) and positive definite (eigenvalues above
/// [`FEASIBILITY_TOL`]) at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct CertificateMatrix {
    p_x: DMatrix<f64>,
    p_theta: DMatrix<f64>,
}

impl CertificateMatrix {
    pub fn new(p_x: DMatrix<f64>, p_theta: DMatrix<f64>) -> Result<Self> {
        if p_x.nrows() != p_x.ncols() || p_x.nrows() == 0 {
            return Err(Error::ShapeMismatch {
                arg: "P_x",
                reason: format!("state block must be square and nonempty, got {}x{}", p_x.nrows(), p_x.ncols()),
            });
        }
        if p_theta.nrows() != 2 || p_theta.ncols() != 2 {
            return Err(Error::ShapeMismatch {
                arg: "P_theta",
                reason: format!(
                    "perturbation block must be 2x2 (one scalar size perturbation per set), got {}x{}",
                    p_theta.nrows(),
                    p_theta.ncols()
                ),
            });
        }
        check_symmetric("P_x", &p_x)?;
        check_symmetric("P_theta", &p_theta)?;
        check_positive_definite("P_x", &p_x)?;
        check_positive_definite("P_theta", &p_theta)?;
        Ok(Self { p_x, p_theta })
    }

    pub fn p_x(&self) -> &DMatrix<f64> {
        &self.p_x
    }

    pub fn p_theta(&self) -> &DMatrix<f64> {
        &self.p_theta
    }

    /// Dimension of the physical-state block.
    pub fn state_dim(&self) -> usize {
        self.p_x.nrows()
    }

    /// Full `(n+2) x (n+2)` block-diagonal matrix.
    pub fn assembled(&self) -> DMatrix<f64> {
        let n = self.state_dim();
        let mut p = DMatrix::zeros(n + 2, n + 2);
        p.view_mut((0, 0), (n, n)).copy_from(&self.p_x);
        p.view_mut((n, n), (2, 2)).copy_from(&self.p_theta);
        p
    }

    pub fn lambda_max_x(&self) -> f64 {
        symmetric_eigenvalues(&self.p_x).into_iter().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn lambda_min_x(&self) -> f64 {
        symmetric_eigenvalues(&self.p_x).into_iter().fold(f64::INFINITY, f64::min)
    }

    /// Scales both blocks by `alpha > 0`, preserving validity. The safety
    /// bound is invariant under this, while `eta`, `beta`, and `c` scale
    /// linearly.
    pub fn scaled(&self, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::ContractViolation {
                arg: "alpha",
                reason: format!("scale factor must be positive and finite, got {alpha}"),
            });
        }
        Self::new(&self.p_x * alpha, &self.p_theta * alpha)
    }
}

/// Diagnostic flags attached to a [`CertificateReport`]. All flags except
/// [`Flag::VacuousBound`] invalidate the certificate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Flag {
    /// The bound clamped at zero: the certificate is valid but proves
    /// nothing for this horizon.
    VacuousBound,
    /// The quadrature path found a perturbation value for which the unsafe
    /// set reaches the origin, so the closest-distance integrand clamps and
    /// `beta` would overstate the barrier there.
    UnsafeDistanceClamped,
    /// The unit-ball closed form was asked for an unsafe set whose nominal
    /// gap to the origin is not positive.
    NonpositiveUnsafeGap,
    /// The contraction margin exceeds the feasibility tolerance.
    FeasibilityViolated,
    /// `beta < eta`: the certificate fails the level-ordering requirement.
    BetaBelowEta,
}

impl Flag {
    /// Whether this flag makes the certificate unusable (as opposed to
    /// merely uninformative).
    pub fn invalidates(self) -> bool {
        !matches!(self, Flag::VacuousBound)
    }
}

impl std::fmt::Display for Flag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Flag::VacuousBound => "vacuous-bound",
            Flag::UnsafeDistanceClamped => "unsafe-distance-clamped",
            Flag::NonpositiveUnsafeGap => "nonpositive-unsafe-gap",
            Flag::FeasibilityViolated => "feasibility-violated",
            Flag::BetaBelowEta => "beta-below-eta",
        };
        f.write_str(s)
    }
}

/// Everything the certification pipeline produces for one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct CertificateReport {
    /// Probability that the uncertain initial and unsafe sets are disjoint.
    pub p_empty: f64,
    /// Complement of `p_empty`; the two always sum to 1 exactly.
    pub p_overlap: f64,
    pub eta: f64,
    pub beta: f64,
    pub c: f64,
    /// `max(0, 1 - (eta + c T) / beta)` when the certificate is valid,
    /// `0.0` otherwise.
    pub safety_lower_bound: f64,
    /// `lambda_max(A_cl' P_x A_cl - P_x)`.
    pub feasibility_margin: f64,
    pub valid: bool,
    pub diagnostics: Vec<Flag>,
}

/// Disjointness probability of the two uncertain sets.
///
/// Both sets must share the same shape kernel. The signed nominal gap is
/// `d = |c_u - c_i|_R - (s_i + s_u)`, and the sets are disjoint exactly
/// when the two nonnegative size perturbations sum to less than `d`, so
/// `p_empty = P(theta_i + theta_u <= d)` via the sum-law CDF.
///
/// Returns `(p_overlap, p_empty)`.
pub fn overlap_probability(init: &UncertainSet, unsafe_set: &UncertainSet) -> Result<(f64, f64)> {
    if !init.kernel().same_shape(unsafe_set.kernel()) {
        return Err(Error::UnsupportedConfiguration(
            "overlap probability requires both sets to share one shape kernel".into(),
        ));
    }
    let d_nominal = gauge_distance(init.kernel(), init.center(), unsafe_set.center())?;
    let d_bar = d_nominal - (init.nominal_size() + unsafe_set.nominal_size());
    let p_empty = sum_cdf(init.perturbation(), unsafe_set.perturbation(), d_bar).clamp(0.0, 1.0);
    Ok((1.0 - p_empty, p_empty))
}

/// Contraction margin `lambda_max(A_cl' P_x A_cl - P_x)` of the certificate
/// under the closed loop.
///
/// The certificate's drift condition holds iff the margin is at most `tol`
/// (conventionally [`FEASIBILITY_TOL`]). The perturbation block enters the
/// drift condition only through `P_theta > 0`, which is re-checked here
/// against the same `tol`: the perturbation rows of the augmented dynamics
/// are zero, so the block contributes `-P_theta` to the drift and needs no
/// inequality of its own.
pub fn check_feasibility(a_cl: &DMatrix<f64>, p: &CertificateMatrix, tol: f64) -> Result<f64> {
    let n = p.state_dim();
    if a_cl.nrows() != n || a_cl.ncols() != n {
        return Err(Error::ShapeMismatch {
            arg: "A_cl",
            reason: format!("closed loop must be {n}x{n} to match the certificate, got {}x{}", a_cl.nrows(), a_cl.ncols()),
        });
    }
    for ev in symmetric_eigenvalues(p.p_theta()) {
        if ev <= tol {
            return Err(Error::InvalidCertificate(format!(
                "perturbation block must be positive definite, found eigenvalue {ev:e} <= {tol:e}"
            )));
        }
    }
    let m = a_cl.transpose() * p.p_x() * a_cl - p.p_x();
    let sym = (&m + m.transpose()) * 0.5;
    Ok(symmetric_eigenvalues(&sym).into_iter().fold(f64::NEG_INFINITY, f64::max))
}

/// `eta` and `beta` by Gauss-Legendre quadrature of the squared extremal
/// distances against the size-perturbation laws:
///
/// * `eta  = p_empty * lambda_max(P_x) * E[d_init_max(theta_i)^2]`
/// * `beta = p_empty * lambda_min(P_x) * E[d_unsafe_min(theta_u)^2]`
///
/// Point-mass laws are evaluated exactly. The returned boolean is true when
/// the closest-distance clamp fired at any quadrature node, meaning the
/// unsafe set reaches the origin with non-negligible probability and `beta`
/// is unsound; callers must invalidate the certificate in that case.
pub fn eta_beta_general(
    init: &UncertainSet,
    unsafe_set: &UncertainSet,
    p: &CertificateMatrix,
    p_empty: f64,
) -> Result<(f64, f64, bool)> {
    check_eta_beta_inputs(init, unsafe_set, p, p_empty)?;
    let moment_init = expectation(init.perturbation(), &mut |theta| {
        d_init_max(init, theta).map(|d| d * d)
    })?;
    let mut clamped = false;
    let moment_unsafe = expectation(unsafe_set.perturbation(), &mut |theta| {
        d_unsafe_min(unsafe_set, theta).map(|(d, hit)| {
            if hit {
                clamped = true;
            }
            d * d
        })
    })?;
    let eta = p_empty * p.lambda_max_x() * moment_init;
    let beta = p_empty * p.lambda_min_x() * moment_unsafe;
    Ok((eta, beta, clamped))
}

/// Closed-form `eta` and `beta` for unit-ball sets with half-normal size
/// perturbations (a point mass at zero counts as the zero-width limit):
///
/// * `eta  = p_empty * lambda_max(P_x) * (g_i^2 + 2 g_i s_i sqrt(2/pi) + s_i^2)`
///   with `g_i = |c_i| + r_i`,
/// * `beta = p_empty * lambda_min(P_x) * (g_u^2 - 2 g_u s_u sqrt(2/pi) + s_u^2)`
///   with `g_u = |c_u| - r_u`,
///
/// which are `E[(g_i + theta)^2]` and `E[(g_u - theta)^2]` under the
/// half-normal first and second moments. The returned boolean is true when
/// `g_u <= 0` (the nominal unsafe set reaches the origin); `beta` is then
/// reported as zero and the certificate must be invalidated.
pub fn eta_beta_ball(
    init: &UncertainSet,
    unsafe_set: &UncertainSet,
    p: &CertificateMatrix,
    p_empty: f64,
) -> Result<(f64, f64, bool)> {
    check_eta_beta_inputs(init, unsafe_set, p, p_empty)?;
    if !matches!(init.kernel(), ShapeKernel::UnitBall(_)) || !matches!(unsafe_set.kernel(), ShapeKernel::UnitBall(_)) {
        return Err(Error::UnsupportedConfiguration(
            "closed-form eta/beta requires unit-ball sets".into(),
        ));
    }
    let sigma_i = half_normal_sigma(init.perturbation())?;
    let sigma_u = half_normal_sigma(unsafe_set.perturbation())?;
    let mean_factor = (2.0 / std::f64::consts::PI).sqrt();
    let g_i = init.center().norm() + init.nominal_size();
    let eta = p_empty * p.lambda_max_x() * (g_i * g_i + 2.0 * g_i * sigma_i * mean_factor + sigma_i * sigma_i);
    let g_u = unsafe_set.center().norm() - unsafe_set.nominal_size();
    if g_u <= 0.0 {
        return Ok((eta, 0.0, true));
    }
    let beta =
        p_empty * p.lambda_min_x() * (g_u * g_u - 2.0 * g_u * sigma_u * mean_factor + sigma_u * sigma_u);
    Ok((eta, beta, false))
}

/// One-step expected barrier increase
/// `c = Tr(D' P D Sigma)` where `Sigma` is the diagonal of second moments
/// of the augmented disturbance (process noise per state coordinate, then
/// the two size-perturbation second moments).
pub fn compute_c(aug: &AugmentedSystem, p: &CertificateMatrix) -> Result<f64> {
    let dim = aug.augmented_dim();
    if p.state_dim() + 2 != dim {
        return Err(Error::ShapeMismatch {
            arg: "P",
            reason: format!(
                "certificate is for state dimension {}, augmented system has dimension {dim}",
                p.state_dim()
            ),
        });
    }
    let p_full = p.assembled();
    let m = aug.d_bar().transpose() * p_full * aug.d_bar() * aug.sigma_w_bar();
    Ok(m.trace())
}

/// Safety lower bound `max(0, 1 - (eta + c T) / beta)` over `t` steps.
///
/// Returns the bound and a flag that is true when the unclamped value was
/// negative (the bound is vacuous). Errs when `beta <= 0` or `beta < eta`,
/// which violate the certificate definition.
pub fn safety_lower_bound(eta: f64, beta: f64, c: f64, t: u32) -> Result<(f64, bool)> {
    if !(eta >= 0.0) || !(c >= 0.0) {
        return Err(Error::ContractViolation {
            arg: "eta",
            reason: format!("eta and c must be nonnegative, got eta = {eta}, c = {c}"),
        });
    }
    if t == 0 {
        return Err(Error::ContractViolation {
            arg: "t",
            reason: "horizon must be at least one step".into(),
        });
    }
    if !(beta > 0.0) {
        return Err(Error::InvalidCertificate(format!(
            "beta must be positive, got {beta}"
        )));
    }
    if beta < eta {
        return Err(Error::InvalidCertificate(format!(
            "certificate requires beta >= eta, got beta = {beta} < eta = {eta}"
        )));
    }
    let raw = 1.0 - (eta + c * f64::from(t)) / beta;
    Ok((raw.max(0.0), raw < 0.0))
}

/// Runs the full certification pipeline for one configuration and collects
/// the results into a [`CertificateReport`].
///
/// The closed-form path is used when both sets are unit balls with
/// half-normal (or zero) size perturbations; anything else goes through the
/// quadrature path. Soundness flags from either path, a positive
/// contraction margin, and `beta < eta` all invalidate the report; the
/// bound is then reported as zero. A valid report whose bound clamps at
/// zero carries the vacuous-bound diagnostic instead.
pub fn build_report(
    a_cl: &DMatrix<f64>,
    aug: &AugmentedSystem,
    p: &CertificateMatrix,
    init: &UncertainSet,
    unsafe_set: &UncertainSet,
    horizon: u32,
) -> Result<CertificateReport> {
    if init.dim() != p.state_dim() || unsafe_set.dim() != p.state_dim() {
        return Err(Error::ShapeMismatch {
            arg: "init",
            reason: format!(
                "sets must live in the certificate's state dimension {} (got {} and {})",
                p.state_dim(),
                init.dim(),
                unsafe_set.dim()
            ),
        });
    }
    let (p_overlap, p_empty) = overlap_probability(init, unsafe_set)?;
    let feasibility_margin = check_feasibility(a_cl, p, FEASIBILITY_TOL)?;
    let mut diagnostics = Vec::new();
    if feasibility_margin > FEASIBILITY_TOL {
        diagnostics.push(Flag::FeasibilityViolated);
    }
    let (eta, beta, flagged) = if ball_closed_form_applies(init, unsafe_set) {
        let (eta, beta, gap) = eta_beta_ball(init, unsafe_set, p, p_empty)?;
        if gap {
            diagnostics.push(Flag::NonpositiveUnsafeGap);
        }
        (eta, beta, gap)
    } else {
        let (eta, beta, clamp) = eta_beta_general(init, unsafe_set, p, p_empty)?;
        if clamp {
            diagnostics.push(Flag::UnsafeDistanceClamped);
        }
        (eta, beta, clamp)
    };
    let c = compute_c(aug, p)?;
    if !flagged && beta < eta {
        diagnostics.push(Flag::BetaBelowEta);
    }
    let invalid = diagnostics.iter().any(|f| f.invalidates());
    let safety_bound = if invalid {
        0.0
    } else {
        let (bound, vacuous) = safety_lower_bound(eta, beta, c, horizon)?;
        if vacuous {
            diagnostics.push(Flag::VacuousBound);
        }
        bound
    };
    Ok(CertificateReport {
        p_empty,
        p_overlap,
        eta,
        beta,
        c,
        safety_lower_bound: safety_bound,
        feasibility_margin,
        valid: !invalid,
        diagnostics,
    })
}

/// Whether the unit-ball closed forms apply to this pair of sets.
pub fn ball_closed_form_applies(init: &UncertainSet, unsafe_set: &UncertainSet) -> bool {
    matches!(init.kernel(), ShapeKernel::UnitBall(_))
        && matches!(unsafe_set.kernel(), ShapeKernel::UnitBall(_))
        && half_normal_sigma(init.perturbation()).is_ok()
        && half_normal_sigma(unsafe_set.perturbation()).is_ok()
}

/// Result of one statistical or analytic certificate check.
#[derive(Debug, Clone)]
pub struct CbcCheck {
    /// One of `initial-set-bound`, `unsafe-set-bound`, `drift-bound`.
    pub condition: &'static str,
    pub passed: bool,
    /// The sampled or computed quantity being compared.
    pub measured: f64,
    /// The acceptance threshold it was compared against.
    pub threshold: f64,
    pub detail: String,
}

/// Cross-checks the three certificate conditions against the report.
///
/// The initial-set condition samples points of the uncertain initial set
/// and verifies the disjointness-weighted mean of the perturbation-averaged
/// barrier stays below `eta` (plus three standard errors). The unsafe-set
/// condition samples size perturbations, evaluates the exact barrier
/// infimum over each realized unsafe set, and verifies the weighted mean
/// stays above `beta` (minus three standard errors) — when the unsafe set
/// reaches the origin for sampled perturbations, the infimum collapses and
/// this check exposes an unsound `beta`. The drift condition is analytic:
/// for a quadratic barrier the expected one-step increase is at most `c`
/// exactly when the contraction margin is nonpositive, because the
/// perturbation rows of the augmented dynamics are zero.
pub fn validate_cbc(
    aug: &AugmentedSystem,
    p: &CertificateMatrix,
    init: &UncertainSet,
    unsafe_set: &UncertainSet,
    report: &CertificateReport,
) -> Vec<CbcCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(VALIDATE_SEED);
    let mut checks = Vec::with_capacity(3);
    let p11 = p.p_theta()[(0, 0)];
    let p22 = p.p_theta()[(1, 1)];
    let theta_i_m2 = init.perturbation().second_moment();
    let theta_u_m2 = unsafe_set.perturbation().second_moment();

    // Initial-set condition: averaged barrier at sampled points vs eta.
    let n_init = if matches!(init.kernel(), ShapeKernel::UnitBall(_)) {
        VALIDATE_SAMPLES
    } else {
        VALIDATE_SAMPLES_ORACLE
    };
    let mut values = Vec::with_capacity(n_init);
    for _ in 0..n_init {
        let theta = init.perturbation().sample(&mut rng);
        if let Some(x) = sample_point(init, theta, &mut rng) {
            let b = (x.transpose() * p.p_x() * &x)[(0, 0)] + p11 * theta * theta + p22 * theta_u_m2;
            values.push(b);
        }
    }
    checks.push(upper_check("initial-set-bound", &values, report.p_empty, report.eta));

    // Unsafe-set condition: exact barrier infimum per sampled perturbation
    // vs beta.
    let n_unsafe = if matches!(unsafe_set.kernel(), ShapeKernel::UnitBall(_)) {
        VALIDATE_SAMPLES
    } else {
        VALIDATE_SAMPLES_ORACLE
    };
    let lambda_min = p.lambda_min_x();
    let mut values = Vec::with_capacity(n_unsafe);
    let mut clamped = 0usize;
    for _ in 0..n_unsafe {
        let theta = unsafe_set.perturbation().sample(&mut rng);
        if let Ok((d, hit)) = d_unsafe_min(unsafe_set, theta) {
            if hit {
                clamped += 1;
            }
            values.push(lambda_min * d * d + p11 * theta_i_m2 + p22 * theta * theta);
        }
    }
    let mut check = lower_check("unsafe-set-bound", &values, report.p_empty, report.beta);
    if clamped > 0 {
        check.detail = format!(
            "{}; origin inside the realized unsafe set for {clamped} of {} sampled perturbations",
            check.detail,
            values.len()
        );
    }
    checks.push(check);

    // Drift condition: analytic equivalence with the contraction margin.
    let margin = report.feasibility_margin;
    let _ = aug; // drift needs no simulation: the margin already decides it
    checks.push(CbcCheck {
        condition: "drift-bound",
        passed: margin <= FEASIBILITY_TOL,
        measured: margin,
        threshold: FEASIBILITY_TOL,
        detail: format!(
            "quadratic barrier: expected one-step increase is at most c exactly when the contraction margin is nonpositive (margin = {margin:.3e})"
        ),
    });
    checks
}

/// Grid search over diagonal congruence scalings of the state block,
/// keeping `P_theta` fixed: tries `P_x' = D P_x D` for every diagonal `D`
/// with entries from `per_axis`, renormalizes each candidate to unit trace,
/// and returns the candidate (with its report) achieving the best valid
/// safety bound. Requires unit-ball sets so each candidate evaluates in
/// closed form or cheap quadrature. This is a bounded enumeration, not a
/// solver.
pub fn grid_search_diagonal(
    a_cl: &DMatrix<f64>,
    aug: &AugmentedSystem,
    p: &CertificateMatrix,
    init: &UncertainSet,
    unsafe_set: &UncertainSet,
    horizon: u32,
    per_axis: &[f64],
) -> Result<(CertificateMatrix, CertificateReport)> {
    if !matches!(init.kernel(), ShapeKernel::UnitBall(_)) || !matches!(unsafe_set.kernel(), ShapeKernel::UnitBall(_)) {
        return Err(Error::UnsupportedConfiguration(
            "diagonal grid search requires unit-ball sets".into(),
        ));
    }
    if per_axis.is_empty() || per_axis.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::ContractViolation {
            arg: "per_axis",
            reason: "scaling grid must be nonempty and strictly positive".into(),
        });
    }
    let n = p.state_dim();
    let combos = per_axis.len().checked_pow(n as u32).filter(|&k| k <= 1 << 20).ok_or_else(|| {
        Error::ContractViolation {
            arg: "per_axis",
            reason: format!("scaling grid of {} values in dimension {n} is too large", per_axis.len()),
        }
    })?;
    let mut best: Option<(CertificateMatrix, CertificateReport)> = None;
    for index in 0..combos {
        let mut rem = index;
        let mut d = DVector::from_element(n, 1.0);
        for j in 0..n {
            d[j] = per_axis[rem % per_axis.len()];
            rem /= per_axis.len();
        }
        let scaled = DMatrix::from_diagonal(&d) * p.p_x() * DMatrix::from_diagonal(&d);
        let trace = scaled.trace();
        if !(trace > 0.0) {
            continue;
        }
        let Ok(candidate) = CertificateMatrix::new(scaled / trace, p.p_theta().clone()) else {
            continue;
        };
        let Ok(report) = build_report(a_cl, aug, &candidate, init, unsafe_set, horizon) else {
            continue;
        };
        if !report.valid {
            continue;
        }
        let better = match &best {
            None => true,
            Some((_, b)) => report.safety_lower_bound > b.safety_lower_bound,
        };
        if better {
            best = Some((candidate, report));
        }
    }
    best.ok_or_else(|| {
        Error::NoCertificate("no scaling in the grid produced a valid certificate".into())
    })
}

/// Default per-axis grid for [`grid_search_diagonal`]: 13 log-spaced
/// scalings covering two decades.
pub fn default_scaling_grid() -> Vec<f64> {
    (0..13).map(|i| 10f64.powf(-1.0 + f64::from(i) / 6.0)).collect()
}

// ---------------------------------------------------------------------------
// Internals
// ---------------------------------------------------------------------------

fn check_symmetric(name: &'static str, m: &DMatrix<f64>) -> Result<()> {
    let scale = 1.0 + m.amax();
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-9 * scale {
                return Err(Error::Validation {
                    path: name.into(),
                    reason: format!(
                        "matrix must be symmetric within 1e-9 relative, entries ({i},{j}) and ({j},{i}) differ by {:e}",
                        (m[(i, j)] - m[(j, i)]).abs()
                    ),
                });
            }
        }
    }
    Ok(())
}

fn check_positive_definite(name: &'static str, m: &DMatrix<f64>) -> Result<()> {
    for ev in symmetric_eigenvalues(m) {
        if !(ev > FEASIBILITY_TOL) {
            return Err(Error::Validation {
                path: name.into(),
                reason: format!(
                    "matrix must be positive definite (eigenvalues above {FEASIBILITY_TOL:e}), found {ev:e}"
                ),
            });
        }
    }
    Ok(())
}

fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    m.clone().symmetric_eigen().eigenvalues.iter().copied().collect()
}

fn check_eta_beta_inputs(
    init: &UncertainSet,
    unsafe_set: &UncertainSet,
    p: &CertificateMatrix,
    p_empty: f64,
) -> Result<()> {
    if init.dim() != p.state_dim() || unsafe_set.dim() != p.state_dim() {
        return Err(Error::ShapeMismatch {
            arg: "init",
            reason: format!(
                "sets must live in the certificate's state dimension {} (got {} and {})",
                p.state_dim(),
                init.dim(),
                unsafe_set.dim()
            ),
        });
    }
    if !(0.0..=1.0).contains(&p_empty) {
        return Err(Error::ContractViolation {
            arg: "p_empty",
            reason: format!("probability must lie in [0, 1], got {p_empty}"),
        });
    }
    Ok(())
}

fn half_normal_sigma(law: &ScalarDistribution) -> Result<f64> {
    match law {
        ScalarDistribution::HalfNormal { sigma } => Ok(*sigma),
        ScalarDistribution::Degenerate { value } if *value == 0.0 => Ok(0.0),
        _ => Err(Error::UnsupportedConfiguration(
            "closed-form eta/beta requires half-normal (or zero) size perturbations".into(),
        )),
    }
}

/// Expectation `E[f(theta)]` under a scalar law: exact for point masses,
/// Gauss-Legendre with [`QUAD_NODES`] nodes over the law's quadrature range
/// otherwise.
fn expectation(law: &ScalarDistribution, f: &mut dyn FnMut(f64) -> Result<f64>) -> Result<f64> {
    if let ScalarDistribution::Degenerate { value } = law {
        return f(*value);
    }
    let (a, b) = law.quad_range();
    if !(b > a) {
        return f(a);
    }
    let (nodes, weights) = gauss_legendre_128();
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut acc = 0.0;
    for (x, w) in nodes.iter().zip(weights.iter()) {
        let t = mid + half * x;
        acc += w * law.pdf(t) * f(t)?;
    }
    Ok(acc * half)
}

fn gauss_legendre_128() -> (&'static [f64], &'static [f64]) {
    static CACHE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    let (n, w) = CACHE.get_or_init(|| gauss_legendre(QUAD_NODES));
    (n, w)
}

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`,
/// by Newton iteration on the Legendre polynomial from the standard
/// cosine initial guesses.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 2);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Legendre polynomial `P_n(x)` and its derivative via the three-term
/// recurrence.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p_prev = 1.0;
    let mut p = x;
    for k in 1..n {
        let k_f = k as f64;
        let next = ((2.0 * k_f + 1.0) * x * p - k_f * p_prev) / (k_f + 1.0);
        p_prev = p;
        p = next;
    }
    let d = n as f64 * (x * p - p_prev) / (x * x - 1.0);
    (p, d)
}

/// Uniform sample from the inflated set, or `None` when rejection sampling
/// fails (degenerate oracle geometry).
fn sample_point(set: &UncertainSet, theta: f64, rng: &mut ChaCha8Rng) -> Option<DVector<f64>> {
    sample_uniform(set, theta, rng)
}

fn mean_stderr(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn upper_check(condition: &'static str, values: &[f64], p_empty: f64, level: f64) -> CbcCheck {
    if values.is_empty() {
        return CbcCheck {
            condition,
            passed: true,
            measured: f64::NAN,
            threshold: level,
            detail: "no samples could be drawn; check skipped".into(),
        };
    }
    let (mean, stderr) = mean_stderr(values);
    let measured = p_empty * mean;
    let threshold = level + 3.0 * p_empty * stderr + 1e-12;
    CbcCheck {
        condition,
        passed: measured <= threshold,
        measured,
        threshold,
        detail: format!(
            "weighted mean of the averaged barrier over {} samples is {measured:.6e}, level {level:.6e}",
            values.len()
        ),
    }
}

fn lower_check(condition: &'static str, values: &[f64], p_empty: f64, level: f64) -> CbcCheck {
    if values.is_empty() {
        return CbcCheck {
            condition,
            passed: true,
            measured: f64::NAN,
            threshold: level,
            detail: "no samples could be drawn; check skipped".into(),
        };
    }
    let (mean, stderr) = mean_stderr(values);
    let measured = p_empty * mean;
    let threshold = level - 3.0 * p_empty * stderr - 1e-12;
    CbcCheck {
        condition,
        passed: measured >= threshold,
        measured,
        threshold,
        detail: format!(
            "weighted mean of the barrier infimum over {} samples is {measured:.6e}, level {level:.6e}",
            values.len()
        ),
    }
}
