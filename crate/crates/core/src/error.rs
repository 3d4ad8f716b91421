//! Error type shared by every module in the crate.

use thiserror::Error;

/// Unified error enumeration.
///
/// Variants are grouped by origin: input/shape problems, contract violations
/// detected at call boundaries, numerical failures, and I/O or parse errors
/// surfaced by the scenario layer.
#[derive(Debug, Error)]
pub enum Error {
    /// Matrix or vector dimensions do not agree.
    #[error("shape mismatch for {arg}: {reason}")]
    ShapeMismatch { arg: &'static str, reason: String },

    /// A value violates a documented invariant. `path` names the offending
    /// field in scenario-document notation (for example `system.sigma_w`).
    #[error("invalid value at {path}: {reason}")]
    Validation { path: String, reason: String },

    /// A caller broke a function precondition (for example passing a
    /// non-unit direction to a support function).
    #[error("contract violation in {arg}: {reason}")]
    ContractViolation { arg: &'static str, reason: String },

    /// The requested configuration is outside the supported model class.
    #[error("unsupported configuration: {0}")]
    UnsupportedConfiguration(String),

    /// An inflated set became degenerate (negative size).
    #[error("degenerate set: {0}")]
    DegenerateSet(String),

    /// Gain synthesis failed to converge; the pair (A, B) is treated as
    /// not stabilizable.
    #[error("unstabilizable system: {0}")]
    Unstabilizable(String),

    /// No quadratic certificate exists for the given closed loop.
    #[error("no certificate: {0}")]
    NoCertificate(String),

    /// The supplied or computed certificate fails a validity condition.
    #[error("invalid certificate: {0}")]
    InvalidCertificate(String),

    /// Document could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),

    /// Filesystem failure while reading or writing.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
