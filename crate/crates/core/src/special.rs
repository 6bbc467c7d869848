//! Scalar normal and logistic helpers shared by every module.

use libm::erfc;
use statrs::function::erf::erfc_inv;
use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal CDF. Exact limits at ±∞.
#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    if x == f64::INFINITY {
        1.0
    } else if x == f64::NEG_INFINITY {
        0.0
    } else {
        0.5 * erfc(-x * FRAC_1_SQRT_2)
    }
}

#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    if x.is_infinite() {
        0.0
    } else {
        FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
    }
}

/// Standard normal quantile; returns ±∞ at the end points.
#[inline]
pub fn norm_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        f64::NEG_INFINITY
    } else if p >= 1.0 {
        f64::INFINITY
    } else {
        -SQRT_2 * erfc_inv(2.0 * p)
    }
}

#[inline]
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// log(1 - expit(x)) computed without cancellation.
#[inline]
pub fn log_one_minus_expit(x: f64) -> f64 {
    if x > 0.0 {
        -x - (-x).exp().ln_1p()
    } else {
        -(x.exp().ln_1p())
    }
}

/// log(expit(x)).
#[inline]
pub fn log_expit(x: f64) -> f64 {
    log_one_minus_expit(-x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cdf_reference_values() {
        assert_eq!(norm_cdf(0.0), 0.5);
        assert_relative_eq!(norm_cdf(1.959_963_984_540_054), 0.975, epsilon = 1e-14);
        assert_relative_eq!(norm_cdf(-3.0), 0.001_349_898_031_630_094_6, max_relative = 1e-12);
        assert_eq!(norm_cdf(f64::INFINITY), 1.0);
        assert_eq!(norm_cdf(f64::NEG_INFINITY), 0.0);
    }

    #[test]
    fn quantile_inverts_cdf() {
        for &p in &[1e-12, 1e-6, 0.01, 0.3, 0.5, 0.77, 0.999, 1.0 - 1e-9] {
            assert_relative_eq!(norm_cdf(norm_quantile(p)), p, max_relative = 1e-10);
        }
        assert_eq!(norm_quantile(0.0), f64::NEG_INFINITY);
        assert_eq!(norm_quantile(1.0), f64::INFINITY);
    }

    #[test]
    fn logistic_helpers_are_stable() {
        assert_relative_eq!(expit(-1.5), 0.182_425_523_806_356_2, epsilon = 1e-15);
        assert_relative_eq!(logit(expit(0.3)), 0.3, epsilon = 1e-14);
        assert_relative_eq!(log_one_minus_expit(800.0), -800.0, epsilon = 1e-12);
        assert_relative_eq!(log_expit(-800.0), -800.0, epsilon = 1e-12);
        assert_relative_eq!(log_one_minus_expit(0.2), (1.0 - expit(0.2)).ln(), epsilon = 1e-15);
        assert_eq!(expit(f64::NEG_INFINITY), 0.0);
    }
}
