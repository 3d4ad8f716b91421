//! Safety certification for discrete-time stochastic linear systems whose
//! initial and unsafe sets are themselves random.
//!
//! The library computes a provable lower bound on the probability that a
//! closed-loop linear system avoids an uncertain unsafe set over a finite
//! horizon. Both the initial set and the unsafe set are convex bodies whose
//! sizes are inflated by random scalar perturbations; the analysis lifts the
//! state to an augmented space containing those perturbations and builds a
//! quadratic barrier certificate `B(z) = z' P z` there. The certificate's
//! level constants (`eta` on the initial set, `beta` on the unsafe set) and
//! per-step expected growth (`c`) combine into the supermartingale bound
//!
//! ```text
//! p_safe >= 1 - (eta + c*T) / beta
//! ```
//!
//! scaled by the probability that the two random sets are disjoint.
//!
//! Every analytic quantity is cross-checkable against a seeded Monte Carlo
//! oracle in [`montecarlo`], and the whole pipeline is scriptable through the
//! scenario documents of [`scenario`].

pub mod certificate;
pub mod distributions;
pub mod error;
pub mod geometry;
pub mod linsys;
pub mod montecarlo;
pub mod repro;
pub mod scenario;
pub mod synthesis;

pub use error::Error;

/// Convenience alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;
