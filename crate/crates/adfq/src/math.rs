//! Scalar Gaussian primitives.
//!
//! Everything here is pure and works in double precision. The CDF goes through
//! the complementary error function so that far-tail values keep full relative
//! accuracy, and [`log_normal_cdf`] switches to the asymptotic Mills-ratio
//! series once `erfc` would underflow.

use std::f64::consts::{FRAC_1_SQRT_2, LN_2};

use crate::error::{domain, Result};

/// `ln(1 / sqrt(2π))`.
pub const LN_INV_SQRT_2PI: f64 = -0.918_938_533_204_672_7;

/// Below this argument `Φ` is evaluated through its asymptotic expansion in
/// log space (`Φ(-37)` is about `5.7e-300`).
const LOG_CDF_ASYMPTOTIC_BELOW: f64 = -37.0;

/// Mean and variance of one independent Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianParams {
    mean: f64,
    variance: f64,
}

impl GaussianParams {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        if !(variance > 0.0) || !variance.is_finite() || !mean.is_finite() {
            return domain(format!(
                "gaussian needs finite mean and positive variance, got ({mean}, {variance})"
            ));
        }
        Ok(Self { mean, variance })
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn stddev(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// Standard normal density `φ(z)`.
#[inline]
pub fn std_normal_pdf(z: f64) -> f64 {
    std_normal_log_pdf(z).exp()
}

#[inline]
pub fn std_normal_log_pdf(z: f64) -> f64 {
    LN_INV_SQRT_2PI - 0.5 * z * z
}

/// Density of `N(mean, stddev²)` at `x`.
pub fn normal_pdf(x: f64, mean: f64, stddev: f64) -> Result<f64> {
    if !(stddev > 0.0) {
        return domain(format!("normal_pdf needs stddev > 0, got {stddev}"));
    }
    Ok(std_normal_pdf((x - mean) / stddev) / stddev)
}

/// Standard normal CDF `Φ(x)`.
#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// `ln Φ(x)`, finite for every finite `x`.
pub fn log_normal_cdf(x: f64) -> f64 {
    if x > 0.0 {
        // Φ(x) = 1 - Φ(-x)
        (-0.5 * libm::erfc(x * FRAC_1_SQRT_2)).ln_1p()
    } else if x > LOG_CDF_ASYMPTOTIC_BELOW {
        libm::erfc(-x * FRAC_1_SQRT_2).ln() - LN_2
    } else {
        // Φ(x) = φ(x)/|x| · (1 - 1/x² + 3/x⁴ - 15/x⁶ + 105/x⁸ - …)
        let inv2 = 1.0 / (x * x);
        let series = 1.0 - inv2 * (1.0 - 3.0 * inv2 * (1.0 - 5.0 * inv2 * (1.0 - 7.0 * inv2)));
        std_normal_log_pdf(x) - (-x).ln() + series.ln()
    }
}

/// `φ(z) / Φ(z)`, the inverse Mills ratio, stable for very negative `z`.
pub fn inverse_mills_ratio(z: f64) -> f64 {
    (std_normal_log_pdf(z) - log_normal_cdf(z)).exp()
}

/// `exp(-½ [-y]₊²)`: the ReLU-shaped stand-in for `Φ(y)`.
///
/// Equal to 1 on `y >= 0`. For `y -> -∞` its gap to `Φ(y)` vanishes.
#[inline]
pub fn relu_cdf_approx(y: f64) -> f64 {
    let neg = (-y).max(0.0);
    (-0.5 * neg * neg).exp()
}

/// Density of `max_i X_i` for independent `X_i ~ N(μ_i, σ_i²)`:
/// `Σ_i (1/σ_i) φ((x-μ_i)/σ_i) Π_{j≠i} Φ((x-μ_j)/σ_j)`.
///
/// The CDF products are accumulated in log space, so a factor far below
/// `1e-300` does not zero out the whole term.
pub fn max_gaussian_pdf(x: f64, params: &[GaussianParams]) -> Result<f64> {
    Ok(max_gaussian_log_pdf(x, params)?.exp())
}

pub fn max_gaussian_log_pdf(x: f64, params: &[GaussianParams]) -> Result<f64> {
    if params.is_empty() {
        return domain("max_gaussian_pdf needs at least one component");
    }
    let n = params.len();
    let z: Vec<f64> = params.iter().map(|p| (x - p.mean) / p.stddev()).collect();
    let log_cdf: Vec<f64> = z.iter().map(|&zi| log_normal_cdf(zi)).collect();

    // suffix[i] = Σ_{j>=i} log Φ_j
    let mut suffix = vec![0.0; n + 1];
    for i in (0..n).rev() {
        suffix[i] = suffix[i + 1] + log_cdf[i];
    }
    let mut prefix = 0.0;
    let mut terms = Vec::with_capacity(n);
    for i in 0..n {
        let others = prefix + suffix[i + 1];
        terms.push(std_normal_log_pdf(z[i]) - 0.5 * params[i].variance.ln() + others);
        prefix += log_cdf[i];
    }
    log_sum_exp(&terms)
}

/// `ln Σ exp(v_i)`, shifted by the maximum.
pub fn log_sum_exp(values: &[f64]) -> Result<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if values.is_empty() {
        return domain("log_sum_exp of an empty slice");
    }
    if !max.is_finite() {
        return Ok(max);
    }
    let sum: f64 = values.iter().map(|&v| (v - max).exp()).sum();
    Ok(max + sum.ln())
}

/// Normalized weights `exp(v_i - max) / Σ exp(v_j - max)`.
pub fn softmax(log_values: &[f64]) -> Result<Vec<f64>> {
    let max = log_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if log_values.is_empty() || !max.is_finite() {
        return domain(format!("softmax needs a finite maximum, got {max}"));
    }
    let mut w: Vec<f64> = log_values.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= sum);
    Ok(w)
}

/// Composite trapezoid rule on a uniform grid.
pub fn trapezoid(values: &[f64], step: f64) -> f64 {
    match values {
        [] | [_] => 0.0,
        [first, inner @ .., last] => step * (0.5 * (first + last) + inner.iter().sum::<f64>()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

    fn gp(m: f64, v: f64) -> GaussianParams {
        GaussianParams::new(m, v).unwrap()
    }

    #[test]
    fn pdf_examples() {
        assert!((normal_pdf(0.0, 0.0, 1.0).unwrap() - INV_SQRT_2PI).abs() < 1e-15);
        for &(m, s) in &[(3.0, 0.5), (-7.0, 2.0), (0.1, 1e-3)] {
            let peak = normal_pdf(m, m, s).unwrap();
            assert!((peak - INV_SQRT_2PI / s).abs() < 1e-12 * (1.0 / s));
        }
        // exp(-4.5)/√(2π), 40-digit reference
        assert!((normal_pdf(-3.0, 0.0, 1.0).unwrap() - 0.004_431_848_411_938_007).abs() < 1e-17);
        assert!(normal_pdf(0.0, 0.0, 0.0).is_err());
        assert!(normal_pdf(0.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn cdf_examples() {
        assert_eq!(normal_cdf(0.0), 0.5);
        assert_eq!(normal_cdf(40.0), 1.0);
        assert!((normal_cdf(-3.0) - 0.001_349_898_031_630_094_5).abs() < 1e-17);
        // far tail, relative accuracy (reference from mpmath)
        let v = normal_cdf(-20.0);
        assert!((v / 2.753_624_118_606_233_4e-89 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn log_cdf_matches_direct_and_asymptotic_regions() {
        for &x in &[-36.9, -30.0, -5.0, -1.0, 0.0, 0.5, 3.0, 9.0] {
            let direct = normal_cdf(x).ln();
            assert!((log_normal_cdf(x) - direct).abs() < 1e-12 * direct.abs().max(1.0), "{x}");
        }
        // continuity across the asymptotic switch
        let a = log_normal_cdf(-37.0 + 1e-9);
        let b = log_normal_cdf(-37.0 - 1e-9);
        assert!((a - b).abs() < 1e-6);
        assert!(log_normal_cdf(-1e3).is_finite());
    }

    #[test]
    fn relu_examples() {
        assert_eq!(relu_cdf_approx(0.0), 1.0);
        assert_eq!(relu_cdf_approx(2.0), 1.0);
        assert!((relu_cdf_approx(-3.0) - 0.011_108_996_538_242_306).abs() < 1e-17);
        let mut prev = 0.0;
        for i in 0..1000 {
            let y = -10.0 + i as f64 * 0.01;
            let v = relu_cdf_approx(y);
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn max_pdf_examples() {
        let one = max_gaussian_pdf(0.0, &[gp(0.0, 1.0)]).unwrap();
        assert!((one - INV_SQRT_2PI).abs() < 1e-15);
        let two = max_gaussian_pdf(0.0, &[gp(0.0, 1.0), gp(0.0, 1.0)]).unwrap();
        assert!((two - 2.0 * INV_SQRT_2PI * 0.5).abs() < 1e-15);
        assert!(max_gaussian_pdf(0.0, &[]).is_err());
        assert!(GaussianParams::new(0.0, 0.0).is_err());
    }

    #[test]
    fn max_pdf_survives_underflowing_cdf_factor() {
        // Φ((x - 100)/0.1) is far below 1e-300 at x = 0.
        let params = [gp(0.0, 1.0), gp(100.0, 0.01)];
        let log = max_gaussian_log_pdf(0.0, &params).unwrap();
        assert!(log.is_finite());
        assert!(log < -400_000.0);
    }

    #[test]
    fn lse_examples() {
        assert_eq!(log_sum_exp(&[0.0]).unwrap(), 0.0);
        let a = 3.7;
        assert!((log_sum_exp(&[a, a]).unwrap() - (a + LN_2)).abs() < 1e-15);
        let v = log_sum_exp(&[-1000.0, -1001.0]).unwrap();
        assert!((v - (-999.686_738_312_481_8)).abs() < 1e-12);
        // naive formula agrees where it does not underflow
        let naive = ((-1.0f64).exp() + (-2.0f64).exp()).ln();
        assert!((log_sum_exp(&[-1.0, -2.0]).unwrap() - naive).abs() < 1e-15);
        assert!(log_sum_exp(&[]).is_err());
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY; 2]).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn softmax_handles_deep_underflow() {
        let w = softmax(&[-2000.0, -2000.0 - 2f64.ln()]).unwrap();
        // ulp(2000) is about 2e-13, so that is the best the input itself resolves
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((w[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn pdf_integrates_to_one() {
        let (lo, hi, n) = (-12.0, 12.0, 24_001);
        let h = (hi - lo) / (n - 1) as f64;
        let vals: Vec<f64> = (0..n).map(|i| std_normal_pdf(lo + i as f64 * h)).collect();
        assert!((trapezoid(&vals, h) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn cdf_monotone_on_grid() {
        let mut prev = 0.0;
        for i in 0..=20_000 {
            let x = -40.0 + i as f64 * 0.004;
            let v = normal_cdf(x);
            assert!(v >= prev, "{x}");
            prev = v;
        }
    }

    proptest! {
        #[test]
        fn cdf_symmetry(x in -40.0f64..40.0) {
            prop_assert!((normal_cdf(x) + normal_cdf(-x) - 1.0).abs() <= 1e-14);
        }

        #[test]
        fn lse_shift_invariance(
            v in proptest::collection::vec(-1e3f64..1e3, 1..20),
            c in -1e3f64..1e3,
        ) {
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let lhs = log_sum_exp(&shifted).unwrap();
            let rhs = log_sum_exp(&v).unwrap() + c;
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1.0));
        }

        #[test]
        fn max_pdf_normalized(
            comps in proptest::collection::vec((-10.0f64..10.0, 0.1f64..5.0), 1..=10)
        ) {
            let params: Vec<GaussianParams> =
                comps.iter().map(|&(m, s)| gp(m, s * s)).collect();
            let smax = comps.iter().map(|c| c.1).fold(0.0, f64::max);
            let lo = comps.iter().map(|c| c.0).fold(f64::INFINITY, f64::min) - 10.0 * smax;
            let hi = comps.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max) + 10.0 * smax;
            let smin = comps.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
            let n = (((hi - lo) / (smin / 10.0)) as usize).max(2001);
            let h = (hi - lo) / (n - 1) as f64;
            let vals: Vec<f64> = (0..n)
                .map(|i| max_gaussian_pdf(lo + i as f64 * h, &params).unwrap())
                .collect();
            prop_assert!(vals.iter().all(|&v| v >= 0.0));
            prop_assert!((trapezoid(&vals, h) - 1.0).abs() < 1e-6);
        }
    }
}
