//! Linear system, closed-loop, and augmented-system representations.
//!
//! The physical model is `x_{k+1} = A x_k + B u_k + w_k` with linear state
//! feedback `u_k = L x_k` and isotropic process noise of per-axis standard
//! deviation `sigma_w`. The safety analysis runs on an augmented state
//! `z = (x, theta_i, theta_u)` whose extra coordinates carry the set-size
//! perturbations; because those are redrawn independently at every step, the
//! augmented dynamics are
//!
//! ```text
//! z_{k+1} = A_bar z_k + D_bar w_bar_k,   A_bar = [A_cl 0; 0 0],  D_bar = I
//! ```
//!
//! with the theta-rows of `A_bar` exactly zero. `Sigma_w_bar` collects the
//! SECOND MOMENTS of the injected noise coordinates (not central variances):
//! for half-normal perturbations both coincide at `sigma^2`, but the
//! distinction matters for laws with nonzero mean.

use nalgebra::{DMatrix, DVector};

use crate::distributions::ScalarDistribution;
use crate::{Error, Result};

/// Discrete-time linear system with isotropic process noise.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    sigma_w: f64,
}

impl LinearSystem {
    /// Validates shapes (`A` square `n x n`, `B` of shape `n x m`) and
    /// `sigma_w >= 0`.
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, sigma_w: f64) -> Result<Self> {
        if a.nrows() != a.ncols() || a.nrows() == 0 {
            return Err(Error::ShapeMismatch {
                arg: "A",
                reason: format!("expected nonempty square matrix, got {}x{}", a.nrows(), a.ncols()),
            });
        }
        if b.nrows() != a.nrows() || b.ncols() == 0 {
            return Err(Error::ShapeMismatch {
                arg: "B",
                reason: format!(
                    "expected {} rows and at least one column, got {}x{}",
                    a.nrows(),
                    b.nrows(),
                    b.ncols()
                ),
            });
        }
        if !(sigma_w >= 0.0) || !sigma_w.is_finite() {
            return Err(Error::Validation {
                path: "system.sigma_w".into(),
                reason: format!("process-noise std must be a nonnegative real, got {sigma_w}"),
            });
        }
        Ok(Self { a, b, sigma_w })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn sigma_w(&self) -> f64 {
        self.sigma_w
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }
}

/// Linear state-feedback gain `u = L x`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackGain {
    l: DMatrix<f64>,
}

impl FeedbackGain {
    pub fn new(l: DMatrix<f64>) -> Result<Self> {
        if l.nrows() == 0 || l.ncols() == 0 {
            return Err(Error::ShapeMismatch {
                arg: "L",
                reason: "gain matrix must be nonempty".into(),
            });
        }
        Ok(Self { l })
    }

    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }
}

/// Augmented dynamics on `(x, theta_i, theta_u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSystem {
    a_bar: DMatrix<f64>,
    d_bar: DMatrix<f64>,
    sigma_w_bar: DMatrix<f64>,
    base_dim: usize,
}

impl AugmentedSystem {
    pub fn a_bar(&self) -> &DMatrix<f64> {
        &self.a_bar
    }

    pub fn d_bar(&self) -> &DMatrix<f64> {
        &self.d_bar
    }

    /// Diagonal matrix of noise second moments
    /// `diag(sigma_w^2, ..., sigma_w^2, E[theta_i^2], E[theta_u^2])`.
    pub fn sigma_w_bar(&self) -> &DMatrix<f64> {
        &self.sigma_w_bar
    }

    pub fn base_dim(&self) -> usize {
        self.base_dim
    }

    pub fn augmented_dim(&self) -> usize {
        self.base_dim + 2
    }
}

/// Closed-loop matrix `A_cl = A + B L`.
pub fn closed_loop(sys: &LinearSystem, gain: &FeedbackGain) -> Result<DMatrix<f64>> {
    let l = gain.l();
    if l.nrows() != sys.input_dim() || l.ncols() != sys.state_dim() {
        return Err(Error::ShapeMismatch {
            arg: "L",
            reason: format!(
                "gain must be {}x{} for this system, got {}x{}",
                sys.input_dim(),
                sys.state_dim(),
                l.nrows(),
                l.ncols()
            ),
        });
    }
    Ok(sys.a() + sys.b() * l)
}

/// Builds the augmented system for given perturbation laws. The theta
/// coordinates are scalars, so the augmented dimension is `n + 2`.
pub fn build_augmented(
    sys: &LinearSystem,
    gain: &FeedbackGain,
    theta_i: &ScalarDistribution,
    theta_u: &ScalarDistribution,
) -> Result<AugmentedSystem> {
    let n = sys.state_dim();
    let a_cl = closed_loop(sys, gain)?;
    let dim = n + 2;
    let mut a_bar = DMatrix::zeros(dim, dim);
    a_bar.view_mut((0, 0), (n, n)).copy_from(&a_cl);
    let d_bar = DMatrix::identity(dim, dim);
    let mut moments = DVector::zeros(dim);
    for i in 0..n {
        moments[i] = sys.sigma_w() * sys.sigma_w();
    }
    moments[n] = theta_i.second_moment();
    moments[n + 1] = theta_u.second_moment();
    Ok(AugmentedSystem {
        a_bar,
        d_bar,
        sigma_w_bar: DMatrix::from_diagonal(&moments),
        base_dim: n,
    })
}

/// One exact augmented step `A_bar z + D_bar noise`.
pub fn step(aug: &AugmentedSystem, z: &DVector<f64>, noise: &DVector<f64>) -> Result<DVector<f64>> {
    let dim = aug.augmented_dim();
    if z.len() != dim || noise.len() != dim {
        return Err(Error::ShapeMismatch {
            arg: "z",
            reason: format!("expected augmented vectors of length {dim}, got {} and {}", z.len(), noise.len()),
        });
    }
    Ok(aug.a_bar() * z + aug.d_bar() * noise)
}

/// Spectral radius via complex eigenvalues; shared by synthesis and the
/// certificate validity checks.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|e| e.norm()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn rlc() -> (LinearSystem, FeedbackGain) {
        // Forward-Euler RLC discretization, step 0.05, R=2, L=9, C=0.5.
        let a = DMatrix::from_row_slice(2, 2, &[1.0 - 0.1 / 9.0, -0.05 / 9.0, 0.1, 1.0]);
        let b = DMatrix::identity(2, 2);
        let sys = LinearSystem::new(a, b, 0.2).unwrap();
        let l = DMatrix::from_row_slice(2, 2, &[-0.0337, -0.0400, -0.0401, -0.0476]);
        (sys, FeedbackGain::new(l).unwrap())
    }

    #[test]
    fn closed_loop_zero_gain_is_identity() {
        let sys = LinearSystem::new(DMatrix::identity(2, 2), DMatrix::identity(2, 2), 0.0).unwrap();
        let gain = FeedbackGain::new(DMatrix::zeros(2, 2)).unwrap();
        assert_eq!(closed_loop(&sys, &gain).unwrap(), DMatrix::identity(2, 2));
    }

    #[test]
    fn closed_loop_zero_a_is_bl() {
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let sys = LinearSystem::new(DMatrix::zeros(2, 2), b.clone(), 0.0).unwrap();
        let l = DMatrix::from_row_slice(2, 2, &[0.5, -1.0, 0.25, 2.0]);
        let gain = FeedbackGain::new(l.clone()).unwrap();
        assert_eq!(closed_loop(&sys, &gain).unwrap(), b * l);
    }

    #[test]
    fn rlc_closed_loop_is_stable() {
        let (sys, gain) = rlc();
        let a_cl = closed_loop(&sys, &gain).unwrap();
        assert_relative_eq!(a_cl[(0, 0)], 0.955188888888889, epsilon = 1e-12);
        assert_relative_eq!(a_cl[(1, 1)], 0.9524, epsilon = 1e-12);
        let rho = spectral_radius(&a_cl);
        assert!(rho < 1.0, "spectral radius {rho}");
        assert_relative_eq!(rho, 0.9552228407840526, epsilon = 1e-9);
    }

    #[test]
    fn closed_loop_shape_mismatch() {
        let (sys, _) = rlc();
        let bad = FeedbackGain::new(DMatrix::zeros(3, 3)).unwrap();
        assert!(closed_loop(&sys, &bad).is_err());
    }

    #[test]
    fn augmented_structure() {
        let (sys, gain) = rlc();
        let ti = ScalarDistribution::half_normal(0.1).unwrap();
        let tu = ScalarDistribution::half_normal(1.0).unwrap();
        let aug = build_augmented(&sys, &gain, &ti, &tu).unwrap();
        assert_eq!(aug.augmented_dim(), 4);
        // Lower-right 2x2 block and both theta rows are exactly zero.
        for r in 2..4 {
            for c in 0..4 {
                assert_eq!(aug.a_bar()[(r, c)], 0.0);
            }
        }
        assert_eq!(aug.d_bar(), &DMatrix::identity(4, 4));
        let sig = aug.sigma_w_bar();
        assert_relative_eq!(sig[(0, 0)], 0.04, epsilon = 1e-15);
        assert_relative_eq!(sig[(1, 1)], 0.04, epsilon = 1e-15);
        assert_relative_eq!(sig[(2, 2)], 0.01, epsilon = 1e-12);
        assert_relative_eq!(sig[(3, 3)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn augmented_zero_noise() {
        let a = DMatrix::from_row_slice(1, 1, &[0.5]);
        let b = DMatrix::from_row_slice(1, 1, &[1.0]);
        let sys = LinearSystem::new(a, b, 0.0).unwrap();
        let gain = FeedbackGain::new(DMatrix::zeros(1, 1)).unwrap();
        let zero = ScalarDistribution::degenerate(0.0).unwrap();
        let aug = build_augmented(&sys, &gain, &zero, &zero).unwrap();
        assert_eq!(aug.sigma_w_bar(), &DMatrix::zeros(3, 3));
    }

    #[test]
    fn second_moments_match_sampling() {
        // The declared second moments agree with empirical ones; guards the
        // moments-not-variances convention for a nonzero-mean law.
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let (sys, gain) = rlc();
        let ti = ScalarDistribution::half_normal(0.1).unwrap();
        let tu = ScalarDistribution::half_normal(1.0).unwrap();
        let aug = build_augmented(&sys, &gain, &ti, &tu).unwrap();
        let n = 1_000_000;
        let (mut s_i, mut s_u) = (0.0, 0.0);
        for _ in 0..n {
            let a = ti.sample(&mut rng);
            let b = tu.sample(&mut rng);
            s_i += a * a;
            s_u += b * b;
        }
        assert!((s_i / n as f64 - aug.sigma_w_bar()[(2, 2)]).abs() < 1e-3);
        assert!((s_u / n as f64 - aug.sigma_w_bar()[(3, 3)]).abs() < 1e-2);
    }

    #[test]
    fn step_zero_maps_to_zero() {
        let (sys, gain) = rlc();
        let d = ScalarDistribution::degenerate(0.0).unwrap();
        let aug = build_augmented(&sys, &gain, &d, &d).unwrap();
        let z = DVector::zeros(4);
        assert_eq!(step(&aug, &z, &z).unwrap(), DVector::zeros(4));
    }

    #[test]
    fn step_block_structure() {
        let (sys, gain) = rlc();
        let d = ScalarDistribution::degenerate(0.0).unwrap();
        let aug = build_augmented(&sys, &gain, &d, &d).unwrap();
        let z = DVector::from_row_slice(&[1.0, -2.0, 5.0, 7.0]);
        let out = step(&aug, &z, &DVector::zeros(4)).unwrap();
        let a_cl = closed_loop(&sys, &gain).unwrap();
        let x = a_cl * DVector::from_row_slice(&[1.0, -2.0]);
        assert_eq!(out[0], x[0]);
        assert_eq!(out[1], x[1]);
        // Theta coordinates are zeroed, not propagated.
        assert_eq!(out[2], 0.0);
        assert_eq!(out[3], 0.0);
    }

    #[test]
    fn step_matches_dense_matvec_oracle() {
        let (sys, gain) = rlc();
        let ti = ScalarDistribution::half_normal(0.3).unwrap();
        let tu = ScalarDistribution::half_normal(0.9).unwrap();
        let aug = build_augmented(&sys, &gain, &ti, &tu).unwrap();
        let z = DVector::from_row_slice(&[0.3, -1.2, 0.8, 2.5]);
        let w = DVector::from_row_slice(&[0.01, -0.02, 0.4, 1.3]);
        let got = step(&aug, &z, &w).unwrap();
        // Hand-rolled matvec, independent of nalgebra's operator path.
        let mut want = vec![0.0; 4];
        for r in 0..4 {
            for c in 0..4 {
                want[r] += aug.a_bar()[(r, c)] * z[c] + aug.d_bar()[(r, c)] * w[c];
            }
        }
        for r in 0..4 {
            assert_relative_eq!(got[r], want[r], epsilon = 1e-14);
        }
    }

    #[test]
    fn step_is_linear() {
        let (sys, gain) = rlc();
        let ti = ScalarDistribution::half_normal(0.3).unwrap();
        let tu = ScalarDistribution::half_normal(0.9).unwrap();
        let aug = build_augmented(&sys, &gain, &ti, &tu).unwrap();
        let z1 = DVector::from_row_slice(&[0.25, -0.5, 1.0, 0.125]);
        let z2 = DVector::from_row_slice(&[2.0, 0.75, -0.25, 1.5]);
        let w1 = DVector::from_row_slice(&[0.5, 0.25, -1.0, 2.0]);
        let w2 = DVector::from_row_slice(&[-0.125, 1.0, 0.5, -0.75]);
        let lhs = step(&aug, &(&z1 + &z2), &(&w1 + &w2)).unwrap();
        let rhs = step(&aug, &z1, &w1).unwrap() + step(&aug, &z2, &w2).unwrap();
        for r in 0..4 {
            assert_relative_eq!(lhs[r], rhs[r], epsilon = 1e-13);
        }
    }

    #[test]
    fn step_shape_error() {
        let (sys, gain) = rlc();
        let d = ScalarDistribution::degenerate(0.0).unwrap();
        let aug = build_augmented(&sys, &gain, &d, &d).unwrap();
        assert!(step(&aug, &DVector::zeros(3), &DVector::zeros(4)).is_err());
    }

    #[test]
    fn system_validation() {
        assert!(LinearSystem::new(DMatrix::zeros(2, 3), DMatrix::zeros(2, 2), 0.1).is_err());
        assert!(LinearSystem::new(DMatrix::zeros(2, 2), DMatrix::zeros(3, 2), 0.1).is_err());
        assert!(LinearSystem::new(DMatrix::identity(2, 2), DMatrix::identity(2, 2), -0.1).is_err());
    }
}
