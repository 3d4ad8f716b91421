//! Scenario documents and result reports: parsing, validation, emission,
//! and the end-to-end certification pipeline they drive.
//!
//! A scenario is a JSON object with the following layout (`?` marks
//! optional fields):
//!
//! ```text
//! {
//!   "label"?: string,
//!   "system": { "a": [[..]], "b": [[..]], "sigma_w": number },
//!   "gain"?: { "l": [[..]] },
//!   "certificate"?: {
//!     "p_x"?: [[..]],
//!     "p_theta"?: [[..]] | { "type": "sigma_tuned" }
//!   },
//!   "init_set": {
//!     "center": [..], "size": number,
//!     "kernel"?: { "type": "ball" },
//!     "perturbation": { "type": "half_normal", "sigma": .. }
//!                   | { "type": "normal", "mu": .., "sigma": .. }
//!                   | { "type": "degenerate", "value": .. }
//!                   | { "type": "tabulated", "grid": [..], "density": [..] }
//!   },
//!   "unsafe_set": { ...same shape as init_set... },
//!   "horizon": positive integer,
//!   "state_bounds"?: { "lower": [..], "upper": [..] },
//!   "sweep"?: { "sigma_w": [..], "sigma_i": [..], "sigma_u": [..],
//!               "samples"?: positive integer }
//! }
//! ```
//!
//! A missing `gain` is synthesized by [`crate::synthesis::synthesize_gain`];
//! a missing `p_x` by [`crate::synthesis::solve_certificate`]. A missing
//! `p_theta` defaults to `1e-6 * I`; the `sigma_tuned` rule derives the
//! perturbation weights from the initial-set scale (see
//! [`crate::repro::tuned_p_theta`]). Validation failures name the offending
//! document path.
//!
//! Result reports are emitted with stable key order and floats at nine
//! significant digits, as JSON or CSV; parameter sweeps have a fixed-column
//! CSV table format.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::certificate::{build_report, CertificateMatrix, CertificateReport, Flag};
use crate::distributions::ScalarDistribution;
use crate::geometry::{ShapeKernel, UncertainSet};
use crate::linsys::{build_augmented, closed_loop, AugmentedSystem, FeedbackGain, LinearSystem};
use crate::montecarlo::{MonteCarloReport, RowStatus, SweepRow};
use crate::synthesis::{solve_certificate, synthesize_gain, SynthesisConfig};
use crate::{Error, Result};

/// Default perturbation weight block: `1e-6 * I`, small enough to leave the
/// state block dominant while keeping the assembled matrix positive
/// definite.
pub fn default_p_theta() -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_row_slice(&[1e-6, 1e-6]))
}

// ---------------------------------------------------------------------------
// Domain model
// ---------------------------------------------------------------------------

/// How the perturbation weight block `P_theta` of a supplied certificate is
/// chosen.
#[derive(Debug, Clone)]
pub enum PThetaPolicy {
    /// Use [`default_p_theta`].
    Default,
    /// Use the given 2x2 matrix verbatim.
    Matrix(DMatrix<f64>),
    /// Derive the weights from the initial-set perturbation scale via
    /// [`crate::repro::tuned_p_theta`].
    SigmaTuned,
}

/// Certificate portion of a scenario. A missing `p_x` is synthesized from
/// the closed loop at certification time.
#[derive(Debug, Clone)]
pub struct CertificateSpec {
    /// State block of the barrier matrix, if supplied.
    pub p_x: Option<DMatrix<f64>>,
    /// Perturbation weight policy.
    pub p_theta: PThetaPolicy,
}

/// Axis-aligned box bounding the state region of interest. Metadata for
/// plots and dumps; the certification pipeline does not constrain states to
/// it.
#[derive(Debug, Clone)]
pub struct StateBounds {
    /// Componentwise lower corner.
    pub lower: DVector<f64>,
    /// Componentwise upper corner.
    pub upper: DVector<f64>,
}

/// Grid specification for a perturbation-scale sweep.
#[derive(Debug, Clone)]
pub struct SweepGrid {
    /// Process-noise scales.
    pub sigma_w: Vec<f64>,
    /// Initial-set perturbation scales (zero means the nominal set).
    pub sigma_i: Vec<f64>,
    /// Unsafe-set perturbation scales (zero means the nominal set).
    pub sigma_u: Vec<f64>,
    /// Trajectories per grid point, when the document pins it.
    pub samples: Option<u64>,
}

/// A fully validated scenario: the closed-loop safety-verification problem
/// plus optional pre-supplied gain and certificate.
#[derive(Debug, Clone)]
pub struct Scenario {
    /// Human-readable name, echoed in logs.
    pub label: String,
    /// Open-loop dynamics and process-noise scale.
    pub system: LinearSystem,
    /// Feedback gain, if supplied; otherwise synthesized.
    pub gain: Option<FeedbackGain>,
    /// Certificate matrix parts, if supplied; otherwise synthesized.
    pub certificate: Option<CertificateSpec>,
    /// Uncertain initial set.
    pub init_set: UncertainSet,
    /// Uncertain unsafe set.
    pub unsafe_set: UncertainSet,
    /// Number of closed-loop steps checked (membership is tested at steps
    /// `0..=horizon`).
    pub horizon: u32,
    /// Optional state box of interest.
    pub state_bounds: Option<StateBounds>,
    /// Optional sweep grids.
    pub sweep: Option<SweepGrid>,
}

/// Everything resolved by the certification pipeline for one scenario.
#[derive(Debug, Clone)]
pub struct CertifiedScenario {
    /// The feedback gain in effect (supplied or synthesized).
    pub gain: FeedbackGain,
    /// Closed-loop matrix `A + B L`.
    pub a_cl: DMatrix<f64>,
    /// The certificate matrix in effect (supplied or synthesized).
    pub certificate: CertificateMatrix,
    /// Augmented-space model used for the expected-growth constant.
    pub augmented: AugmentedSystem,
    /// Levels, growth constant, bound, and diagnostics.
    pub report: CertificateReport,
}

// ---------------------------------------------------------------------------
// Document model (serde)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioDoc {
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    system: SystemDoc,
    #[serde(skip_serializing_if = "Option::is_none")]
    gain: Option<GainDoc>,
    #[serde(skip_serializing_if = "Option::is_none")]
    certificate: Option<CertificateDoc>,
    init_set: SetDoc,
    unsafe_set: SetDoc,
    horizon: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    state_bounds: Option<BoundsDoc>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sweep: Option<SweepDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SystemDoc {
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    sigma_w: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GainDoc {
    l: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CertificateDoc {
    #[serde(skip_serializing_if = "Option::is_none")]
    p_x: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    p_theta: Option<PThetaDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum PThetaDoc {
    Rule {
        #[serde(rename = "type")]
        kind: String,
    },
    Matrix(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SetDoc {
    center: Vec<f64>,
    size: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    kernel: Option<KernelDoc>,
    perturbation: DistDoc,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum KernelDoc {
    Ball,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum DistDoc {
    HalfNormal { sigma: f64 },
    Normal { mu: f64, sigma: f64 },
    Degenerate { value: f64 },
    Tabulated { grid: Vec<f64>, density: Vec<f64> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoundsDoc {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepDoc {
    sigma_w: Vec<f64>,
    sigma_i: Vec<f64>,
    sigma_u: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    samples: Option<u64>,
}

// ---------------------------------------------------------------------------
// Parsing and validation
// ---------------------------------------------------------------------------

fn invalid(path: &str, reason: impl Into<String>) -> Error {
    Error::Validation {
        path: path.to_string(),
        reason: reason.into(),
    }
}

/// Wraps a nested constructor error with the document path it came from.
fn at<T>(path: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| invalid(path, e.to_string()))
}

fn matrix_from_rows(rows: &[Vec<f64>], path: &str) -> Result<DMatrix<f64>> {
    if rows.is_empty() || rows[0].is_empty() {
        return Err(invalid(path, "matrix must have at least one row and column"));
    }
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(invalid(path, "matrix rows must all have the same length"));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(invalid(path, "matrix entries must be finite"));
    }
    Ok(DMatrix::from_row_iterator(
        rows.len(),
        cols,
        rows.iter().flatten().copied(),
    ))
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn vector_from(values: &[f64], path: &str) -> Result<DVector<f64>> {
    if values.is_empty() {
        return Err(invalid(path, "vector must be non-empty"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(invalid(path, "vector entries must be finite"));
    }
    Ok(DVector::from_row_slice(values))
}

fn dist_from_doc(doc: &DistDoc, path: &str) -> Result<ScalarDistribution> {
    match doc {
        DistDoc::HalfNormal { sigma } => {
            if !sigma.is_finite() || *sigma < 0.0 {
                return Err(invalid(
                    &format!("{path}.sigma"),
                    format!("half-normal scale must be a nonnegative real, got {sigma}"),
                ));
            }
            at(&format!("{path}.sigma"), ScalarDistribution::half_normal_or_zero(*sigma))
        }
        DistDoc::Normal { mu, sigma } => at(path, ScalarDistribution::normal(*mu, *sigma)),
        DistDoc::Degenerate { value } => at(path, ScalarDistribution::degenerate(*value)),
        DistDoc::Tabulated { grid, density } => at(
            path,
            ScalarDistribution::tabulated(grid.clone(), density.clone()),
        ),
    }
}

fn dist_to_doc(dist: &ScalarDistribution) -> DistDoc {
    match dist {
        ScalarDistribution::HalfNormal { sigma } => DistDoc::HalfNormal { sigma: *sigma },
        ScalarDistribution::Normal { mu, sigma } => DistDoc::Normal {
            mu: *mu,
            sigma: *sigma,
        },
        ScalarDistribution::Degenerate { value } => DistDoc::Degenerate { value: *value },
        ScalarDistribution::Tabulated(law) => DistDoc::Tabulated {
            grid: law.grid().to_vec(),
            density: law.density().to_vec(),
        },
    }
}

fn set_from_doc(doc: &SetDoc, path: &str, state_dim: usize) -> Result<UncertainSet> {
    let center = vector_from(&doc.center, &format!("{path}.center"))?;
    if center.len() != state_dim {
        return Err(invalid(
            &format!("{path}.center"),
            format!(
                "center has {} components but the system state has {}",
                center.len(),
                state_dim
            ),
        ));
    }
    let dim = center.len();
    let kernel = match doc.kernel {
        None | Some(KernelDoc::Ball) => ShapeKernel::UnitBall(dim),
    };
    let perturbation = dist_from_doc(&doc.perturbation, &format!("{path}.perturbation"))?;
    at(
        path,
        UncertainSet::new(center, doc.size, kernel, perturbation),
    )
}

fn set_to_doc(set: &UncertainSet) -> Result<SetDoc> {
    if !matches!(set.kernel(), ShapeKernel::UnitBall(_)) {
        return Err(Error::UnsupportedConfiguration(
            "only ball-kernel sets have a document form; oracle kernels are code-level objects"
                .into(),
        ));
    }
    Ok(SetDoc {
        center: set.center().iter().copied().collect(),
        size: set.nominal_size(),
        kernel: Some(KernelDoc::Ball),
        perturbation: dist_to_doc(set.perturbation()),
    })
}

fn doc_to_scenario(doc: &ScenarioDoc) -> Result<Scenario> {
    let a = matrix_from_rows(&doc.system.a, "system.a")?;
    if a.nrows() != a.ncols() {
        return Err(invalid("system.a", "state matrix must be square"));
    }
    let n = a.nrows();
    let b = matrix_from_rows(&doc.system.b, "system.b")?;
    if b.nrows() != n {
        return Err(invalid(
            "system.b",
            format!("input matrix has {} rows but the state has {n}", b.nrows()),
        ));
    }
    let m = b.ncols();
    let system = at("system", LinearSystem::new(a, b, doc.system.sigma_w))?;

    let gain = match &doc.gain {
        Some(g) => {
            let l = matrix_from_rows(&g.l, "gain.l")?;
            if l.nrows() != m || l.ncols() != n {
                return Err(invalid(
                    "gain.l",
                    format!(
                        "gain must be {m}x{n} for this system, got {}x{}",
                        l.nrows(),
                        l.ncols()
                    ),
                ));
            }
            Some(at("gain.l", FeedbackGain::new(l))?)
        }
        None => None,
    };

    let certificate = match &doc.certificate {
        Some(c) => {
            let p_x = match &c.p_x {
                Some(rows) => {
                    let p = matrix_from_rows(rows, "certificate.p_x")?;
                    if p.nrows() != n || p.ncols() != n {
                        return Err(invalid(
                            "certificate.p_x",
                            format!(
                                "state block must be {n}x{n}, got {}x{}",
                                p.nrows(),
                                p.ncols()
                            ),
                        ));
                    }
                    Some(p)
                }
                None => None,
            };
            let p_theta = match &c.p_theta {
                None => PThetaPolicy::Default,
                Some(PThetaDoc::Rule { kind }) => {
                    if kind != "sigma_tuned" {
                        return Err(invalid(
                            "certificate.p_theta.type",
                            format!("unknown perturbation-weight rule `{kind}` (expected `sigma_tuned`)"),
                        ));
                    }
                    PThetaPolicy::SigmaTuned
                }
                Some(PThetaDoc::Matrix(rows)) => {
                    let p = matrix_from_rows(rows, "certificate.p_theta")?;
                    if p.nrows() != 2 || p.ncols() != 2 {
                        return Err(invalid(
                            "certificate.p_theta",
                            format!(
                                "perturbation block must be 2x2, got {}x{}",
                                p.nrows(),
                                p.ncols()
                            ),
                        ));
                    }
                    PThetaPolicy::Matrix(p)
                }
            };
            Some(CertificateSpec { p_x, p_theta })
        }
        None => None,
    };

    let init_set = set_from_doc(&doc.init_set, "init_set", n)?;
    let unsafe_set = set_from_doc(&doc.unsafe_set, "unsafe_set", n)?;

    if doc.horizon == 0 {
        return Err(invalid("horizon", "horizon must be a positive integer"));
    }

    let state_bounds = match &doc.state_bounds {
        Some(bd) => {
            let lower = vector_from(&bd.lower, "state_bounds.lower")?;
            let upper = vector_from(&bd.upper, "state_bounds.upper")?;
            if lower.len() != n || upper.len() != n {
                return Err(invalid(
                    "state_bounds",
                    format!("bounds must have {n} components each"),
                ));
            }
            if lower.iter().zip(upper.iter()).any(|(l, u)| !(l < u)) {
                return Err(invalid(
                    "state_bounds",
                    "each lower bound must be strictly below its upper bound",
                ));
            }
            Some(StateBounds { lower, upper })
        }
        None => None,
    };

    let sweep = match &doc.sweep {
        Some(sd) => Some(sweep_from_doc(sd)?),
        None => None,
    };

    Ok(Scenario {
        label: doc.label.clone().unwrap_or_else(|| "unlabeled".into()),
        system,
        gain,
        certificate,
        init_set,
        unsafe_set,
        horizon: doc.horizon,
        state_bounds,
        sweep,
    })
}

fn sweep_from_doc(sd: &SweepDoc) -> Result<SweepGrid> {
    let check_axis = |name: &str, values: &[f64], allow_zero: bool| -> Result<()> {
        let path = format!("sweep.{name}");
        if values.is_empty() {
            return Err(invalid(&path, "grid axis must be non-empty"));
        }
        for v in values {
            if !v.is_finite() || *v < 0.0 || (!allow_zero && *v == 0.0) {
                return Err(invalid(
                    &path,
                    format!(
                        "grid entries must be {} reals, got {v}",
                        if allow_zero { "nonnegative" } else { "positive" }
                    ),
                ));
            }
        }
        Ok(())
    };
    check_axis("sigma_w", &sd.sigma_w, false)?;
    check_axis("sigma_i", &sd.sigma_i, true)?;
    check_axis("sigma_u", &sd.sigma_u, true)?;
    if sd.samples == Some(0) {
        return Err(invalid("sweep.samples", "sample count must be positive"));
    }
    Ok(SweepGrid {
        sigma_w: sd.sigma_w.clone(),
        sigma_i: sd.sigma_i.clone(),
        sigma_u: sd.sigma_u.clone(),
        samples: sd.samples,
    })
}

fn scenario_to_doc(s: &Scenario) -> Result<ScenarioDoc> {
    Ok(ScenarioDoc {
        label: Some(s.label.clone()),
        system: SystemDoc {
            a: matrix_to_rows(s.system.a()),
            b: matrix_to_rows(s.system.b()),
            sigma_w: s.system.sigma_w(),
        },
        gain: s.gain.as_ref().map(|g| GainDoc {
            l: matrix_to_rows(g.l()),
        }),
        certificate: s.certificate.as_ref().map(|c| CertificateDoc {
            p_x: c.p_x.as_ref().map(matrix_to_rows),
            p_theta: match &c.p_theta {
                PThetaPolicy::Default => None,
                PThetaPolicy::SigmaTuned => Some(PThetaDoc::Rule {
                    kind: "sigma_tuned".into(),
                }),
                PThetaPolicy::Matrix(m) => Some(PThetaDoc::Matrix(matrix_to_rows(m))),
            },
        }),
        init_set: set_to_doc(&s.init_set)?,
        unsafe_set: set_to_doc(&s.unsafe_set)?,
        horizon: s.horizon,
        state_bounds: s.state_bounds.as_ref().map(|bd| BoundsDoc {
            lower: bd.lower.iter().copied().collect(),
            upper: bd.upper.iter().copied().collect(),
        }),
        sweep: s.sweep.as_ref().map(|sw| SweepDoc {
            sigma_w: sw.sigma_w.clone(),
            sigma_i: sw.sigma_i.clone(),
            sigma_u: sw.sigma_u.clone(),
            samples: sw.samples,
        }),
    })
}

/// Parses and validates a scenario document. Errors name the offending
/// field in document-path notation.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let doc: ScenarioDoc =
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("scenario document: {e}")))?;
    doc_to_scenario(&doc)
}

/// Serializes a scenario back to its document form (pretty JSON, stable
/// key order, full-precision floats). Fails for scenarios using oracle
/// kernels, which have no document representation.
pub fn emit_scenario(s: &Scenario) -> Result<String> {
    let doc = scenario_to_doc(s)?;
    serde_json::to_string_pretty(&doc).map_err(|e| Error::Parse(format!("emit: {e}")))
}

// ---------------------------------------------------------------------------
// Certification pipeline
// ---------------------------------------------------------------------------

/// Resolves the feedback gain (supplied or synthesized) and the closed-loop
/// matrix for a scenario.
pub fn resolve_closed_loop(s: &Scenario) -> Result<(FeedbackGain, DMatrix<f64>)> {
    let gain = match &s.gain {
        Some(g) => g.clone(),
        None => synthesize_gain(&s.system, &SynthesisConfig::default())?,
    };
    let a_cl = closed_loop(&s.system, &gain)?;
    Ok((gain, a_cl))
}

fn init_perturbation_sigma(s: &Scenario) -> Result<f64> {
    match s.init_set.perturbation() {
        ScalarDistribution::HalfNormal { sigma } => Ok(*sigma),
        ScalarDistribution::Degenerate { value } if *value == 0.0 => Ok(0.0),
        _ => Err(Error::UnsupportedConfiguration(
            "the sigma_tuned perturbation-weight rule needs a half-normal (or exactly zero) \
             initial-set perturbation"
                .into(),
        )),
    }
}

fn resolve_p_theta(s: &Scenario) -> Result<DMatrix<f64>> {
    let policy = s
        .certificate
        .as_ref()
        .map(|c| &c.p_theta)
        .unwrap_or(&PThetaPolicy::Default);
    match policy {
        PThetaPolicy::Default => Ok(default_p_theta()),
        PThetaPolicy::Matrix(m) => Ok(m.clone()),
        PThetaPolicy::SigmaTuned => Ok(crate::repro::tuned_p_theta(init_perturbation_sigma(s)?)),
    }
}

/// Runs the full certification pipeline on a scenario: resolve the gain,
/// resolve the certificate matrix, build the augmented model, and compute
/// the level constants, growth constant, and safety lower bound.
pub fn certify_scenario(s: &Scenario) -> Result<CertifiedScenario> {
    let (gain, a_cl) = resolve_closed_loop(s)?;
    let cfg = SynthesisConfig::default();
    let p_x = match s.certificate.as_ref().and_then(|c| c.p_x.as_ref()) {
        Some(m) => m.clone(),
        None => solve_certificate(&a_cl, &cfg)?,
    };
    let p_theta = resolve_p_theta(s)?;
    let certificate = CertificateMatrix::new(p_x, p_theta)?;
    let augmented = build_augmented(
        &s.system,
        &gain,
        s.init_set.perturbation(),
        s.unsafe_set.perturbation(),
    )?;
    let report = build_report(
        &a_cl,
        &augmented,
        &certificate,
        &s.init_set,
        &s.unsafe_set,
        s.horizon,
    )?;
    Ok(CertifiedScenario {
        gain,
        a_cl,
        certificate,
        augmented,
        report,
    })
}

// ---------------------------------------------------------------------------
// Report emission
// ---------------------------------------------------------------------------

/// Output encodings for result reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    /// Nested JSON object with stable key order.
    Json,
    /// Single-row CSV with a header line.
    Csv,
}

/// Formats a float with nine significant digits (scientific notation).
/// Non-finite values become JSON `null`.
fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.8e}")
    } else {
        "null".into()
    }
}

/// Emits a certification report, optionally with an attached Monte Carlo
/// section, in the requested format. Key order is fixed and floats carry
/// nine significant digits.
pub fn emit_report(
    cert: &CertificateReport,
    mc: Option<&MonteCarloReport>,
    format: ReportFormat,
) -> String {
    match format {
        ReportFormat::Json => emit_report_json(cert, mc),
        ReportFormat::Csv => emit_report_csv(cert, mc),
    }
}

fn diagnostics_json(diags: &[Flag]) -> String {
    let items: Vec<String> = diags.iter().map(|f| format!("\"{f}\"")).collect();
    format!("[{}]", items.join(", "))
}

fn emit_report_json(cert: &CertificateReport, mc: Option<&MonteCarloReport>) -> String {
    let mut out = String::new();
    out.push_str("{\n  \"certificate\": {\n");
    out.push_str(&format!("    \"p_empty\": {},\n", fmt_f64(cert.p_empty)));
    out.push_str(&format!("    \"p_overlap\": {},\n", fmt_f64(cert.p_overlap)));
    out.push_str(&format!("    \"eta\": {},\n", fmt_f64(cert.eta)));
    out.push_str(&format!("    \"beta\": {},\n", fmt_f64(cert.beta)));
    out.push_str(&format!("    \"c\": {},\n", fmt_f64(cert.c)));
    out.push_str(&format!(
        "    \"safety_lower_bound\": {},\n",
        fmt_f64(cert.safety_lower_bound)
    ));
    out.push_str(&format!(
        "    \"feasibility_margin\": {},\n",
        fmt_f64(cert.feasibility_margin)
    ));
    out.push_str(&format!("    \"valid\": {},\n", cert.valid));
    out.push_str(&format!(
        "    \"diagnostics\": {}\n",
        diagnostics_json(&cert.diagnostics)
    ));
    out.push_str("  }");
    if let Some(r) = mc {
        out.push_str(",\n  \"monte_carlo\": {\n");
        out.push_str(&format!("    \"samples\": {},\n", r.samples));
        out.push_str(&format!("    \"master_seed\": {},\n", r.master_seed));
        out.push_str(&format!("    \"unsafe_hits\": {},\n", r.unsafe_hits));
        out.push_str(&format!("    \"start_overlaps\": {},\n", r.start_overlaps));
        out.push_str(&format!(
            "    \"p_safe_empirical\": {},\n",
            fmt_f64(r.p_safe_empirical)
        ));
        out.push_str(&format!("    \"ci_low\": {},\n", fmt_f64(r.ci_low)));
        out.push_str(&format!("    \"ci_high\": {},\n", fmt_f64(r.ci_high)));
        let hist: Vec<String> = r.first_hit_histogram.iter().map(u64::to_string).collect();
        out.push_str(&format!(
            "    \"first_hit_histogram\": [{}]",
            hist.join(", ")
        ));
        match &r.trajectory_dump {
            Some(path) => out.push_str(&format!(
                ",\n    \"trajectory_dump\": {}\n",
                serde_json::to_string(path).unwrap_or_else(|_| "null".into())
            )),
            None => out.push('\n'),
        }
        out.push_str("  }");
    }
    out.push_str("\n}\n");
    out
}

fn emit_report_csv(cert: &CertificateReport, mc: Option<&MonteCarloReport>) -> String {
    let mut out = String::from(
        "p_empty,p_overlap,eta,beta,c,bound,feasibility_margin,valid,diagnostics,\
         samples,unsafe_hits,start_overlaps,empirical,ci_low,ci_high\n",
    );
    let diags: Vec<String> = cert.diagnostics.iter().map(|f| f.to_string()).collect();
    out.push_str(&format!(
        "{},{},{},{},{},{},{},{},{}",
        fmt_f64(cert.p_empty),
        fmt_f64(cert.p_overlap),
        fmt_f64(cert.eta),
        fmt_f64(cert.beta),
        fmt_f64(cert.c),
        fmt_f64(cert.safety_lower_bound),
        fmt_f64(cert.feasibility_margin),
        cert.valid,
        diags.join(";"),
    ));
    match mc {
        Some(r) => out.push_str(&format!(
            ",{},{},{},{},{},{}\n",
            r.samples,
            r.unsafe_hits,
            r.start_overlaps,
            fmt_f64(r.p_safe_empirical),
            fmt_f64(r.ci_low),
            fmt_f64(r.ci_high),
        )),
        None => out.push_str(",,,,,,\n"),
    }
    out
}

/// Parses a JSON report produced by [`emit_report`] back into its parts.
pub fn parse_report(text: &str) -> Result<(CertificateReport, Option<MonteCarloReport>)> {
    let v: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("report document: {e}")))?;
    let cert_v = v
        .get("certificate")
        .ok_or_else(|| Error::Parse("report document: missing `certificate` section".into()))?;
    let f = |key: &str| -> Result<f64> {
        match cert_v.get(key) {
            Some(serde_json::Value::Null) => Ok(f64::NAN),
            Some(x) => x.as_f64().ok_or_else(|| {
                Error::Parse(format!("report document: certificate.{key} is not a number"))
            }),
            None => Err(Error::Parse(format!(
                "report document: missing certificate.{key}"
            ))),
        }
    };
    let diagnostics: Vec<Flag> = match cert_v.get("diagnostics") {
        Some(d) => serde_json::from_value(d.clone())
            .map_err(|e| Error::Parse(format!("report document: diagnostics: {e}")))?,
        None => Vec::new(),
    };
    let cert = CertificateReport {
        p_empty: f("p_empty")?,
        p_overlap: f("p_overlap")?,
        eta: f("eta")?,
        beta: f("beta")?,
        c: f("c")?,
        safety_lower_bound: f("safety_lower_bound")?,
        feasibility_margin: f("feasibility_margin")?,
        valid: cert_v
            .get("valid")
            .and_then(serde_json::Value::as_bool)
            .ok_or_else(|| Error::Parse("report document: missing certificate.valid".into()))?,
        diagnostics,
    };
    let mc = match v.get("monte_carlo") {
        None => None,
        Some(m) => {
            let g = |key: &str| -> Result<f64> {
                m.get(key).and_then(serde_json::Value::as_f64).ok_or_else(|| {
                    Error::Parse(format!("report document: missing monte_carlo.{key}"))
                })
            };
            let gi = |key: &str| -> Result<u64> {
                m.get(key).and_then(serde_json::Value::as_u64).ok_or_else(|| {
                    Error::Parse(format!("report document: missing monte_carlo.{key}"))
                })
            };
            let first_hit_histogram: Vec<u64> = m
                .get("first_hit_histogram")
                .and_then(|h| serde_json::from_value(h.clone()).ok())
                .ok_or_else(|| {
                    Error::Parse("report document: missing monte_carlo.first_hit_histogram".into())
                })?;
            Some(MonteCarloReport {
                samples: gi("samples")?,
                master_seed: gi("master_seed")?,
                unsafe_hits: gi("unsafe_hits")?,
                start_overlaps: gi("start_overlaps")?,
                p_safe_empirical: g("p_safe_empirical")?,
                ci_low: g("ci_low")?,
                ci_high: g("ci_high")?,
                first_hit_histogram,
                trajectory_dump: m
                    .get("trajectory_dump")
                    .and_then(serde_json::Value::as_str)
                    .map(str::to_string),
            })
        }
    };
    Ok((cert, mc))
}

/// Emits a sweep result table as CSV: one fixed header line, one row per
/// grid point, floats at nine significant digits.
pub fn emit_sweep_csv(rows: &[SweepRow]) -> String {
    let mut out =
        String::from("sigma_w,sigma_i,sigma_u,p_empty,eta,beta,c,bound,empirical,ci_low,ci_high,status\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            fmt_f64(r.sigma_w),
            fmt_f64(r.sigma_i),
            fmt_f64(r.sigma_u),
            fmt_f64(r.p_empty),
            fmt_f64(r.eta),
            fmt_f64(r.beta),
            fmt_f64(r.c),
            fmt_f64(r.bound),
            fmt_f64(r.empirical),
            fmt_f64(r.ci_low),
            fmt_f64(r.ci_high),
            r.status,
        ));
    }
    out
}

/// Parses a sweep CSV produced by [`emit_sweep_csv`].
pub fn parse_sweep_csv(text: &str) -> Result<Vec<SweepRow>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("sweep table: empty input".into()))?;
    let expected = "sigma_w,sigma_i,sigma_u,p_empty,eta,beta,c,bound,empirical,ci_low,ci_high,status";
    if header.trim() != expected {
        return Err(Error::Parse(format!(
            "sweep table: unexpected header `{header}`"
        )));
    }
    let mut rows = Vec::new();
    for (idx, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 12 {
            return Err(Error::Parse(format!(
                "sweep table: row {} has {} cells, expected 12",
                idx + 1,
                cells.len()
            )));
        }
        let num = |i: usize| -> Result<f64> {
            cells[i].trim().parse::<f64>().map_err(|e| {
                Error::Parse(format!("sweep table: row {} column {}: {e}", idx + 1, i + 1))
            })
        };
        let status = match cells[11].trim() {
            "valid" => RowStatus::Valid,
            "vacuous" => RowStatus::Vacuous,
            "invalid" => RowStatus::Invalid,
            other => {
                return Err(Error::Parse(format!(
                    "sweep table: row {} has unknown status `{other}`",
                    idx + 1
                )))
            }
        };
        rows.push(SweepRow {
            sigma_w: num(0)?,
            sigma_i: num(1)?,
            sigma_u: num(2)?,
            p_empty: num(3)?,
            eta: num(4)?,
            beta: num(5)?,
            c: num(6)?,
            bound: num(7)?,
            empirical: num(8)?,
            ci_low: num(9)?,
            ci_high: num(10)?,
            status,
        });
    }
    Ok(rows)
}
