//! Scalar probability laws for the set-size perturbations and process noise.
//!
//! Four families are supported: half-normal `|N(0, sigma^2)|` (the default
//! family for set inflations), normal, degenerate point masses, and tabulated
//! densities on a grid. Each law exposes exact moments and CDFs where closed
//! forms exist, and the module implements the distribution of a sum of two
//! independent laws through `sum_cdf`, the quantity behind the probability
//! that the random initial and unsafe sets stay disjoint:
//!
//! ```text
//! F_{theta1 + theta2}(x) = integral F_1(x - t) f_2(t) dt
//! ```
//!
//! The convolution integral uses a fixed 4096-point trapezoid rule on the
//! support of the density factor, truncated at mean + 10 sigma. Exact
//! shortcuts replace the quadrature when either law is degenerate or when
//! both are normal. The two integration orders are averaged so the result is
//! symmetric in its arguments to the last bit.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use libm::{erf, erfc};

use crate::{Error, Result};

/// Number of trapezoid points for the sum-CDF convolution. Chosen so the
/// absolute error stays below 1e-5 for the half-normal scales exercised by
/// the certification pipeline (the disjointness probability only needs 1e-4).
const CONV_POINTS: usize = 4096;

/// Tail multiple defining truncated integration ranges: a law is integrated
/// over `[support_min, mean + TAIL_SIGMAS * sigma]`, leaving less than 1e-22
/// of probability mass outside for the closed-form families.
const TAIL_SIGMAS: f64 = 10.0;

/// Tabulated density on a sorted grid with linear interpolation between
/// nodes. Constructed through [`ScalarDistribution::tabulated`], which
/// validates the grid and normalization and precomputes the cumulative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabulatedLaw {
    grid: Vec<f64>,
    density: Vec<f64>,
    cumulative: Vec<f64>,
}

impl TabulatedLaw {
    /// Grid nodes.
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// Density values at the grid nodes (renormalized at construction).
    pub fn density(&self) -> &[f64] {
        &self.density
    }

    /// Density at `x` by linear interpolation; zero outside the grid.
    fn pdf(&self, x: f64) -> f64 {
        let n = self.grid.len();
        if x < self.grid[0] || x > self.grid[n - 1] {
            return 0.0;
        }
        let i = match self.grid.binary_search_by(|g| g.partial_cmp(&x).unwrap()) {
            Ok(i) => return self.density[i],
            Err(i) => i,
        };
        let (g0, g1) = (self.grid[i - 1], self.grid[i]);
        let w = (x - g0) / (g1 - g0);
        self.density[i - 1] * (1.0 - w) + self.density[i] * w
    }

    /// CDF at `x`; the cumulative between nodes is quadratic because the
    /// density is linear there.
    fn cdf(&self, x: f64) -> f64 {
        let n = self.grid.len();
        if x <= self.grid[0] {
            return 0.0;
        }
        if x >= self.grid[n - 1] {
            return 1.0;
        }
        let i = match self.grid.binary_search_by(|g| g.partial_cmp(&x).unwrap()) {
            Ok(i) => return self.cumulative[i].min(1.0),
            Err(i) => i,
        };
        let (g0, g1) = (self.grid[i - 1], self.grid[i]);
        let (f0, f1) = (self.density[i - 1], self.density[i]);
        let dt = x - g0;
        let slope = (f1 - f0) / (g1 - g0);
        (self.cumulative[i - 1] + f0 * dt + 0.5 * slope * dt * dt).min(1.0)
    }

    /// Inverse-CDF draw: locate the cell by binary search on the cumulative,
    /// then solve the per-cell quadratic exactly.
    fn sample(&self, u: f64) -> f64 {
        let i = match self
            .cumulative
            .binary_search_by(|c| c.partial_cmp(&u).unwrap())
        {
            Ok(i) => return self.grid[i],
            Err(i) => i.clamp(1, self.grid.len() - 1),
        };
        let (g0, g1) = (self.grid[i - 1], self.grid[i]);
        let (f0, f1) = (self.density[i - 1], self.density[i]);
        let target = u - self.cumulative[i - 1];
        let h = g1 - g0;
        let slope = (f1 - f0) / h;
        // Solve 0.5*slope*t^2 + f0*t = target for t in [0, h].
        let t = if slope.abs() < 1e-300 {
            if f0 > 0.0 {
                target / f0
            } else {
                0.5 * h
            }
        } else {
            let disc = (f0 * f0 + 2.0 * slope * target).max(0.0);
            (disc.sqrt() - f0) / slope
        };
        g0 + t.clamp(0.0, h)
    }
}

/// One-dimensional law with moments, CDF, density, and a seeded sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ScalarDistribution {
    /// `|N(0, sigma^2)|`: mean `sigma*sqrt(2/pi)`, second moment `sigma^2`.
    HalfNormal { sigma: f64 },
    /// `N(mu, sigma^2)`.
    Normal { mu: f64, sigma: f64 },
    /// Point mass at `value`.
    Degenerate { value: f64 },
    /// Piecewise-linear density on a sorted grid.
    Tabulated(TabulatedLaw),
}

impl ScalarDistribution {
    /// Half-normal law; `sigma` must be strictly positive.
    pub fn half_normal(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::Validation {
                path: "sigma".into(),
                reason: format!("half-normal scale must be a positive real, got {sigma}"),
            });
        }
        Ok(Self::HalfNormal { sigma })
    }

    /// Half-normal for positive `sigma`, degenerate at zero for `sigma = 0`.
    /// Sweeps over perturbation scales use this so a zero entry means "the
    /// nominal set, exactly".
    pub fn half_normal_or_zero(sigma: f64) -> Result<Self> {
        if sigma == 0.0 {
            Ok(Self::Degenerate { value: 0.0 })
        } else {
            Self::half_normal(sigma)
        }
    }

    /// Normal law; `sigma` must be strictly positive.
    pub fn normal(mu: f64, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() || !mu.is_finite() {
            return Err(Error::Validation {
                path: "sigma".into(),
                reason: format!("normal law needs finite mu and positive sigma, got ({mu}, {sigma})"),
            });
        }
        Ok(Self::Normal { mu, sigma })
    }

    /// Point mass.
    pub fn degenerate(value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::Validation {
                path: "value".into(),
                reason: format!("degenerate value must be finite, got {value}"),
            });
        }
        Ok(Self::Degenerate { value })
    }

    /// Tabulated law. The grid must be strictly increasing with at least two
    /// nodes, the density nonnegative, and the trapezoid integral of the
    /// density must equal 1 within 1e-8; the stored density is renormalized
    /// by the exact trapezoid mass so the CDF reaches 1.
    pub fn tabulated(grid: Vec<f64>, density: Vec<f64>) -> Result<Self> {
        if grid.len() < 2 || grid.len() != density.len() {
            return Err(Error::Validation {
                path: "grid".into(),
                reason: format!(
                    "tabulated law needs matching grid/density with >= 2 nodes, got {}/{}",
                    grid.len(),
                    density.len()
                ),
            });
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) || grid.iter().any(|g| !g.is_finite()) {
            return Err(Error::Validation {
                path: "grid".into(),
                reason: "tabulated grid must be finite and strictly increasing".into(),
            });
        }
        if density.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::Validation {
                path: "density".into(),
                reason: "tabulated density must be finite and nonnegative".into(),
            });
        }
        let mut mass = 0.0;
        for i in 1..grid.len() {
            mass += 0.5 * (density[i] + density[i - 1]) * (grid[i] - grid[i - 1]);
        }
        if (mass - 1.0).abs() > 1e-8 {
            return Err(Error::Validation {
                path: "density".into(),
                reason: format!("tabulated density integrates to {mass}, expected 1 within 1e-8"),
            });
        }
        let density: Vec<f64> = density.iter().map(|d| d / mass).collect();
        let mut cumulative = vec![0.0; grid.len()];
        for i in 1..grid.len() {
            cumulative[i] = cumulative[i - 1]
                + 0.5 * (density[i] + density[i - 1]) * (grid[i] - grid[i - 1]);
        }
        Ok(Self::Tabulated(TabulatedLaw {
            grid,
            density,
            cumulative,
        }))
    }

    /// First moment.
    pub fn mean(&self) -> f64 {
        match self {
            Self::HalfNormal { sigma } => sigma * (2.0 / std::f64::consts::PI).sqrt(),
            Self::Normal { mu, .. } => *mu,
            Self::Degenerate { value } => *value,
            Self::Tabulated(t) => trapezoid_moment(t, 1),
        }
    }

    /// Second raw moment `E[X^2]` (not the central variance).
    pub fn second_moment(&self) -> f64 {
        match self {
            Self::HalfNormal { sigma } => sigma * sigma,
            Self::Normal { mu, sigma } => mu * mu + sigma * sigma,
            Self::Degenerate { value } => value * value,
            Self::Tabulated(t) => trapezoid_moment(t, 2),
        }
    }

    /// Cumulative distribution function.
    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            Self::HalfNormal { sigma } => {
                if x <= 0.0 {
                    0.0
                } else {
                    erf(x / (sigma * std::f64::consts::SQRT_2))
                }
            }
            Self::Normal { mu, sigma } => {
                0.5 * erfc(-(x - mu) / (sigma * std::f64::consts::SQRT_2))
            }
            Self::Degenerate { value } => {
                if x >= *value {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Tabulated(t) => t.cdf(x),
        }
    }

    /// Probability density. Degenerate laws carry no density; callers take
    /// their exact branch instead, and this returns 0 for them.
    pub fn pdf(&self, x: f64) -> f64 {
        match self {
            Self::HalfNormal { sigma } => {
                if x < 0.0 {
                    0.0
                } else {
                    (2.0 / std::f64::consts::PI).sqrt() / sigma
                        * (-0.5 * (x / sigma) * (x / sigma)).exp()
                }
            }
            Self::Normal { mu, sigma } => {
                let z = (x - mu) / sigma;
                (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
            }
            Self::Degenerate { .. } => 0.0,
            Self::Tabulated(t) => t.pdf(x),
        }
    }

    /// Infimum of the support (`-inf` for normal laws).
    pub fn support_min(&self) -> f64 {
        match self {
            Self::HalfNormal { .. } => 0.0,
            Self::Normal { .. } => f64::NEG_INFINITY,
            Self::Degenerate { value } => *value,
            Self::Tabulated(t) => t.grid[0],
        }
    }

    /// Truncated integration interval `[support_min, mean + 10 sigma]` used
    /// by every quadrature in the crate. For unbounded-below laws the lower
    /// end is `mean - 10 sigma`; tabulated laws use their exact grid span.
    pub fn quad_range(&self) -> (f64, f64) {
        match self {
            Self::HalfNormal { sigma } => (0.0, self.mean() + TAIL_SIGMAS * sigma),
            Self::Normal { mu, sigma } => (mu - TAIL_SIGMAS * sigma, mu + TAIL_SIGMAS * sigma),
            Self::Degenerate { value } => (*value, *value),
            Self::Tabulated(t) => (t.grid[0], *t.grid.last().unwrap()),
        }
    }

    /// One draw from the law.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::HalfNormal { sigma } => {
                let z: f64 = rng.sample(StandardNormal);
                sigma * z.abs()
            }
            Self::Normal { mu, sigma } => {
                let z: f64 = rng.sample(StandardNormal);
                mu + sigma * z
            }
            Self::Degenerate { value } => *value,
            Self::Tabulated(t) => t.sample(rng.gen::<f64>()),
        }
    }
}

/// Trapezoid rule for `E[X^k]` of a tabulated law.
fn trapezoid_moment(t: &TabulatedLaw, k: i32) -> f64 {
    let mut acc = 0.0;
    for i in 1..t.grid.len() {
        let a = t.grid[i - 1].powi(k) * t.density[i - 1];
        let b = t.grid[i].powi(k) * t.density[i];
        acc += 0.5 * (a + b) * (t.grid[i] - t.grid[i - 1]);
    }
    acc
}

/// CDF of the sum of two independent laws: `P[X1 + X2 <= x]`.
///
/// Exact when either law is degenerate or both are normal; otherwise a
/// trapezoid convolution of the first law's CDF against the second law's
/// density, averaged over both integration orders so the result is exactly
/// symmetric in the arguments.
pub fn sum_cdf(d1: &ScalarDistribution, d2: &ScalarDistribution, x: f64) -> f64 {
    use ScalarDistribution as D;
    match (d1, d2) {
        (D::Degenerate { value }, other) | (other, D::Degenerate { value }) => {
            other.cdf(x - value)
        }
        (D::Normal { mu: m1, sigma: s1 }, D::Normal { mu: m2, sigma: s2 }) => {
            let sigma = (s1 * s1 + s2 * s2).sqrt();
            0.5 * erfc(-(x - m1 - m2) / (sigma * std::f64::consts::SQRT_2))
        }
        _ => {
            let half = 0.5 * (conv_one_order(d1, d2, x) + conv_one_order(d2, d1, x));
            half.clamp(0.0, 1.0)
        }
    }
}

/// One integration order of the convolution: `integral F_a(x - t) f_b(t) dt`
/// over the effective interval where the integrand is nonzero. Aligning the
/// interval ends with the integrand's kinks keeps the trapezoid rule at its
/// smooth O(h^2) rate.
fn conv_one_order(a: &ScalarDistribution, b: &ScalarDistribution, x: f64) -> f64 {
    let (a_lo, a_hi) = a.quad_range();
    let (b_lo, b_hi) = b.quad_range();
    if x >= a_hi + b_hi {
        return 1.0;
    }
    // F_a(x - t) vanishes for t >= x - a_lo.
    let hi = b_hi.min(x - a_lo);
    if hi <= b_lo {
        return 0.0;
    }
    let h = (hi - b_lo) / (CONV_POINTS - 1) as f64;
    let mut acc = 0.0;
    for i in 0..CONV_POINTS {
        let t = b_lo + h * i as f64;
        let w = if i == 0 || i == CONV_POINTS - 1 { 0.5 } else { 1.0 };
        acc += w * a.cdf(x - t) * b.pdf(t);
    }
    acc * h
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn triangle_law() -> ScalarDistribution {
        // Density f(t) = t/2 on [0, 2]; linear, so the trapezoid grid is exact.
        let grid: Vec<f64> = (0..=200).map(|i| i as f64 / 100.0).collect();
        let density: Vec<f64> = grid.iter().map(|t| t / 2.0).collect();
        ScalarDistribution::tabulated(grid, density).unwrap()
    }

    #[test]
    fn half_normal_moments() {
        let d = ScalarDistribution::half_normal(1.0).unwrap();
        assert_relative_eq!(d.mean(), 0.7978845608028654, epsilon = 1e-15);
        assert_relative_eq!(d.second_moment(), 1.0, epsilon = 1e-15);
        let d = ScalarDistribution::half_normal(0.1).unwrap();
        assert_relative_eq!(d.mean(), 0.1 * 0.7978845608028654, epsilon = 1e-15);
        assert_relative_eq!(d.second_moment(), 0.01, epsilon = 1e-15);
    }

    #[test]
    fn half_normal_cdf() {
        let d = ScalarDistribution::half_normal(1.0).unwrap();
        assert_eq!(d.cdf(0.0), 0.0);
        assert_eq!(d.cdf(-1.0), 0.0);
        // 2*Phi(1) - 1
        assert_relative_eq!(d.cdf(1.0), 0.6826894921370859, epsilon = 1e-12);
        assert_relative_eq!(d.cdf(100.0), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn normal_and_degenerate_moments() {
        let n = ScalarDistribution::normal(-2.0, 5.0).unwrap();
        assert_eq!(n.mean(), -2.0);
        assert_eq!(n.second_moment(), 29.0);
        let d = ScalarDistribution::degenerate(3.0).unwrap();
        assert_eq!(d.mean(), 3.0);
        assert_eq!(d.second_moment(), 9.0);
        assert_eq!(d.cdf(2.999), 0.0);
        assert_eq!(d.cdf(3.0), 1.0);
    }

    #[test]
    fn tabulated_triangle_moments_and_cdf() {
        let t = triangle_law();
        assert_relative_eq!(t.mean(), 4.0 / 3.0, epsilon = 1e-4);
        assert_relative_eq!(t.second_moment(), 2.0, epsilon = 1e-4);
        assert_relative_eq!(t.cdf(1.0), 0.25, epsilon = 1e-9);
        assert_eq!(t.cdf(-0.1), 0.0);
        assert_eq!(t.cdf(2.1), 1.0);
    }

    #[test]
    fn tabulated_rejects_bad_inputs() {
        let bad_mass = ScalarDistribution::tabulated(vec![0.0, 1.0], vec![1.0, 2.0]);
        assert!(bad_mass.is_err());
        let unsorted = ScalarDistribution::tabulated(vec![1.0, 0.0], vec![1.0, 1.0]);
        assert!(unsorted.is_err());
        let negative = ScalarDistribution::tabulated(vec![0.0, 1.0], vec![2.0, -0.1]);
        assert!(negative.is_err());
    }

    #[test]
    fn sum_cdf_degenerate_shortcut() {
        let a = ScalarDistribution::degenerate(1.0).unwrap();
        let b = ScalarDistribution::degenerate(2.0).unwrap();
        assert_eq!(sum_cdf(&a, &b, 3.0), 1.0);
        assert_eq!(sum_cdf(&a, &b, 2.999), 0.0);
    }

    #[test]
    fn sum_cdf_normal_exact() {
        let a = ScalarDistribution::normal(0.0, 3.0).unwrap();
        let b = ScalarDistribution::normal(0.0, 4.0).unwrap();
        assert_relative_eq!(sum_cdf(&a, &b, 0.0), 0.5, epsilon = 1e-15);
        // Sum is N(0, 25); one sigma up.
        assert_relative_eq!(sum_cdf(&a, &b, 5.0), 0.8413447460685429, epsilon = 1e-12);
    }

    #[test]
    fn sum_cdf_half_normal_pair_matches_independent_quadrature() {
        // Frozen against an independent adaptive-quadrature evaluation of
        // the same convolution integral.
        let a = ScalarDistribution::half_normal(0.1).unwrap();
        let b = ScalarDistribution::half_normal(1.0).unwrap();
        let x = 32f64.sqrt() - 1.4;
        assert_relative_eq!(sum_cdf(&a, &b, x), 0.9999693898318716, epsilon = 5e-6);
    }

    #[test]
    fn sum_cdf_symmetric_in_arguments() {
        let a = ScalarDistribution::half_normal(0.7).unwrap();
        let b = triangle_law();
        for x in [-1.0, 0.3, 1.1, 2.6, 4.0] {
            assert_eq!(sum_cdf(&a, &b, x), sum_cdf(&b, &a, x));
        }
    }

    #[test]
    fn sum_cdf_limits_and_monotonicity() {
        let a = ScalarDistribution::half_normal(0.5).unwrap();
        let b = ScalarDistribution::half_normal(1.5).unwrap();
        assert!(sum_cdf(&a, &b, -1e10) < 1e-9);
        assert!(sum_cdf(&a, &b, 1e10) > 1.0 - 1e-9);
        let mut prev = -1.0;
        for i in 0..200 {
            let x = -1.0 + 0.05 * i as f64;
            let v = sum_cdf(&a, &b, x);
            assert!(v >= prev - 1e-9, "non-monotone at x={x}: {v} < {prev}");
            prev = v;
        }
    }

    #[test]
    fn convolution_matches_exact_normal_formula() {
        // Route two normals through the generic quadrature by pairing a
        // normal with a tabulated copy of another normal.
        let a = ScalarDistribution::normal(0.5, 1.0).unwrap();
        // Grid must cover +-10 sigma of N(0.25, 1.5) so the truncated tail mass
        // stays below the tabulation's 1e-8 normalization gate.
        let grid: Vec<f64> =
            (0..=6000).map(|i| -14.75 + i as f64 * (30.0 / 6000.0)).collect();
        let density: Vec<f64> = grid
            .iter()
            .map(|t| {
                let z = (t - 0.25) / 1.5;
                (-0.5 * z * z).exp() / (1.5 * (2.0 * std::f64::consts::PI).sqrt())
            })
            .collect();
        let b_tab = ScalarDistribution::tabulated(grid, density).unwrap();
        let b = ScalarDistribution::normal(0.25, 1.5).unwrap();
        let (mu, sigma) = (0.75, (1.0f64 + 2.25).sqrt());
        for k in -6..=6 {
            let x = mu + sigma * k as f64 / 2.0;
            assert_relative_eq!(sum_cdf(&a, &b_tab, x), sum_cdf(&a, &b, x), epsilon = 1e-6);
        }
    }

    #[test]
    fn sampling_matches_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let laws = [
            ScalarDistribution::half_normal(0.8).unwrap(),
            ScalarDistribution::normal(1.5, 0.6).unwrap(),
            triangle_law(),
        ];
        for law in &laws {
            let n = 1_000_000;
            let mut sum = 0.0;
            let mut sum2 = 0.0;
            for _ in 0..n {
                let v = law.sample(&mut rng);
                sum += v;
                sum2 += v * v;
            }
            let mean = sum / n as f64;
            let m2 = sum2 / n as f64;
            let sd = (m2 - mean * mean).sqrt() / (n as f64).sqrt();
            assert!(
                (mean - law.mean()).abs() < 4.0 * sd + 1e-3,
                "sample mean {mean} vs {} for {law:?}",
                law.mean()
            );
            assert!((m2 - law.second_moment()).abs() < 0.01);
        }
    }

    #[test]
    fn degenerate_samples_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = ScalarDistribution::degenerate(4.25).unwrap();
        for _ in 0..100 {
            assert_eq!(d.sample(&mut rng), 4.25);
        }
    }

    #[test]
    fn normal_sampling_ks_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let law = ScalarDistribution::normal(0.0, 1.0).unwrap();
        let n = 1_000_000;
        let mut draws: Vec<f64> = (0..n).map(|_| law.sample(&mut rng)).collect();
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut ks: f64 = 0.0;
        for (i, v) in draws.iter().enumerate() {
            let emp_hi = (i + 1) as f64 / n as f64;
            let emp_lo = i as f64 / n as f64;
            let c = law.cdf(*v);
            ks = ks.max((emp_hi - c).abs()).max((c - emp_lo).abs());
        }
        assert!(ks < 0.002, "K-S distance {ks}");
    }

    #[test]
    fn jensen_inequality_exact() {
        let laws = [
            ScalarDistribution::half_normal(2.3).unwrap(),
            ScalarDistribution::normal(-4.0, 0.1).unwrap(),
            ScalarDistribution::degenerate(-7.5).unwrap(),
            triangle_law(),
        ];
        for law in &laws {
            assert!(law.second_moment() >= law.mean() * law.mean());
        }
    }

    #[test]
    fn half_normal_rejects_nonpositive_sigma() {
        assert!(ScalarDistribution::half_normal(0.0).is_err());
        assert!(ScalarDistribution::half_normal(-1.0).is_err());
        assert!(ScalarDistribution::half_normal(f64::NAN).is_err());
        assert!(matches!(
            ScalarDistribution::half_normal_or_zero(0.0).unwrap(),
            ScalarDistribution::Degenerate { value } if value == 0.0
        ));
    }
}
