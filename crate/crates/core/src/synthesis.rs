//! Synthesis of feedback gains and quadratic certificates.
//!
//! The certification pipeline needs a pair `(L, P_x)` with `A_cl = A + B L`
//! Schur stable and `A_cl' P_x A_cl - P_x <= 0`. When the caller does not
//! supply the pair it is produced here: `L` from the fixed-point (value)
//! iteration of the discrete-time algebraic Riccati equation, and `P_x` from
//! the discrete Lyapunov equation
//!
//! ```text
//! A_cl' P_x A_cl - P_x = -Q,   Q = lyapunov_rhs + 1e-9 I
//! ```
//!
//! solved by squared-power summation (Smith doubling). For a stabilizing
//! gain this construction always satisfies the feasibility inequality with a
//! strictly negative margin. `P_x` is normalized to unit trace: the safety
//! bound is invariant under positive scalings of the certificate, and the
//! normalization fixes the free scale.

use nalgebra::DMatrix;

use crate::linsys::{spectral_radius, FeedbackGain, LinearSystem};
use crate::{Error, Result};

/// Ridge added to the Lyapunov right-hand side so `Q` is strictly positive
/// definite even for the all-zero default.
const LYAPUNOV_RIDGE: f64 = 1e-9;

/// Weights and iteration controls for gain/certificate synthesis.
#[derive(Debug, Clone)]
pub struct SynthesisConfig {
    /// State weight in the Riccati iteration (default: identity).
    pub state_weight: Option<DMatrix<f64>>,
    /// Input weight in the Riccati iteration (default: identity; must be
    /// positive definite).
    pub input_weight: Option<DMatrix<f64>>,
    /// Right-hand side of the Lyapunov equation before the ridge
    /// (default: zero).
    pub lyapunov_rhs: Option<DMatrix<f64>>,
    pub max_iterations: usize,
    pub convergence_tol: f64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            state_weight: None,
            input_weight: None,
            lyapunov_rhs: None,
            max_iterations: 10_000,
            convergence_tol: 1e-12,
        }
    }
}

fn require_symmetric(m: &DMatrix<f64>, arg: &'static str) -> Result<()> {
    let defect = (m - m.transpose()).norm();
    if defect > 1e-9 * (1.0 + m.norm()) {
        return Err(Error::Validation {
            path: arg.into(),
            reason: format!("matrix must be symmetric, asymmetry norm {defect}"),
        });
    }
    Ok(())
}

/// Stabilizing feedback gain from the Riccati fixed-point iteration.
///
/// Non-convergence (the iterate diverging or failing to settle within
/// `max_iterations`) is reported as an unstabilizable system, as is a
/// converged gain that fails the spectral-radius check.
pub fn synthesize_gain(sys: &LinearSystem, cfg: &SynthesisConfig) -> Result<FeedbackGain> {
    let n = sys.state_dim();
    let m = sys.input_dim();
    let q = match &cfg.state_weight {
        Some(q) => q.clone(),
        None => DMatrix::identity(n, n),
    };
    let r = match &cfg.input_weight {
        Some(r) => r.clone(),
        None => DMatrix::identity(m, m),
    };
    if q.nrows() != n || q.ncols() != n {
        return Err(Error::ShapeMismatch {
            arg: "state_weight",
            reason: format!("expected {n}x{n}, got {}x{}", q.nrows(), q.ncols()),
        });
    }
    if r.nrows() != m || r.ncols() != m {
        return Err(Error::ShapeMismatch {
            arg: "input_weight",
            reason: format!("expected {m}x{m}, got {}x{}", r.nrows(), r.ncols()),
        });
    }
    require_symmetric(&q, "state_weight")?;
    require_symmetric(&r, "input_weight")?;
    if r.clone().cholesky().is_none() {
        return Err(Error::Validation {
            path: "input_weight".into(),
            reason: "input weight must be positive definite".into(),
        });
    }

    let a = sys.a();
    let b = sys.b();
    let mut p = q.clone();
    let scale = 1.0 + q.norm();
    let mut converged = false;
    for _ in 0..cfg.max_iterations {
        let btp = b.transpose() * &p;
        let gram = &r + &btp * b;
        let chol = gram.cholesky().ok_or_else(|| {
            Error::Unstabilizable("Riccati iterate lost positive definiteness".into())
        })?;
        let gain_core = chol.solve(&(&btp * a));
        let next = a.transpose() * &p * a - (a.transpose() * btp.transpose()) * &gain_core + &q;
        let next = (&next + next.transpose()) * 0.5;
        let diff = (&next - &p).norm();
        let denom = 1.0 + next.norm();
        p = next;
        if p.norm() > 1e12 * scale {
            return Err(Error::Unstabilizable(
                "Riccati iteration diverged; (A, B) appears not stabilizable".into(),
            ));
        }
        if diff <= cfg.convergence_tol * denom {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Unstabilizable(format!(
            "Riccati iteration did not converge within {} iterations",
            cfg.max_iterations
        )));
    }

    let btp = b.transpose() * &p;
    let gram = &r + &btp * b;
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Unstabilizable("Riccati gain system not solvable".into()))?;
    let l = -chol.solve(&(&btp * a));
    let gain = FeedbackGain::new(l)?;
    let a_cl = sys.a() + sys.b() * gain.l();
    let rho = spectral_radius(&a_cl);
    if rho >= 1.0 {
        return Err(Error::Unstabilizable(format!(
            "synthesized closed loop has spectral radius {rho} >= 1"
        )));
    }
    Ok(gain)
}

/// Solves `A' P A - P = -Q` for Schur-stable `A` by Smith doubling:
/// `P = sum_k (A')^k Q A^k`.
pub fn solve_discrete_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || q.nrows() != n || q.ncols() != n {
        return Err(Error::ShapeMismatch {
            arg: "A",
            reason: format!(
                "expected square matrices of equal size, got A {}x{}, Q {}x{}",
                a.nrows(),
                a.ncols(),
                q.nrows(),
                q.ncols()
            ),
        });
    }
    require_symmetric(q, "Q")?;
    let rho = spectral_radius(a);
    if rho >= 1.0 {
        return Err(Error::NoCertificate(format!(
            "discrete Lyapunov equation requires spectral radius < 1, got {rho}"
        )));
    }
    let mut p = q.clone();
    let mut m = a.clone();
    // Each pass doubles the number of summed powers; convergence is
    // geometric at rate rho^(2^k).
    for _ in 0..200 {
        let term = m.transpose() * &p * &m;
        let increment = term.norm();
        p += term;
        if increment <= 1e-16 * p.norm() {
            break;
        }
        m = &m * &m;
    }
    Ok((&p + p.transpose()) * 0.5)
}

/// Unit-trace certificate block for a stable closed loop.
pub fn solve_certificate(a_cl: &DMatrix<f64>, cfg: &SynthesisConfig) -> Result<DMatrix<f64>> {
    let n = a_cl.nrows();
    let rhs = match &cfg.lyapunov_rhs {
        Some(m) => {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::ShapeMismatch {
                    arg: "lyapunov_rhs",
                    reason: format!("expected {n}x{n}, got {}x{}", m.nrows(), m.ncols()),
                });
            }
            require_symmetric(m, "lyapunov_rhs")?;
            m.clone()
        }
        None => DMatrix::zeros(n, n),
    };
    let q = rhs + DMatrix::identity(n, n) * LYAPUNOV_RIDGE;
    let p = solve_discrete_lyapunov(a_cl, &q)?;
    let trace = p.trace();
    if !(trace > 0.0) {
        return Err(Error::NoCertificate(format!(
            "Lyapunov solution has nonpositive trace {trace}"
        )));
    }
    Ok(p / trace)
}
