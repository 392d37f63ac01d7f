//! Scalar numerics: log-space sums, normal tails and binomial weights.

use libm::erfc;
use statrs::function::factorial::ln_binomial;

use std::f64::consts::SQRT_2;

/// `ln(Σ exp(x_i))` without overflow. Returns `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// `ln(exp(a) + exp(b))`.
pub fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// Standard normal CDF.
pub fn norm_cdf(z: f64) -> f64 {
    if z == f64::NEG_INFINITY {
        return 0.0;
    }
    if z == f64::INFINITY {
        return 1.0;
    }
    0.5 * erfc(-z / SQRT_2)
}

/// Standard normal survival function `1 - Φ(z)`, accurate in the upper tail.
pub fn norm_sf(z: f64) -> f64 {
    norm_cdf(-z)
}

/// `P(a < Z <= b)` for standard normal `Z`, evaluated on whichever tail keeps precision.
pub fn norm_interval(a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    if a >= 0.0 {
        (norm_sf(a) - norm_sf(b)).max(0.0)
    } else if b <= 0.0 {
        (norm_cdf(b) - norm_cdf(a)).max(0.0)
    } else {
        1.0 - norm_cdf(a) - norm_sf(b)
    }
}

/// Standard normal quantile. Only used to seed brackets, so statrs accuracy suffices.
pub fn norm_quantile(p: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    Normal::standard().inverse_cdf(p)
}

/// Binomial pmf `Bin(k, p)` at `0..=k`, evaluated in log space.
pub fn binomial_pmf(k: u32, p: f64) -> Vec<f64> {
    let n = k as u64;
    if p <= 0.0 {
        let mut w = vec![0.0; k as usize + 1];
        w[0] = 1.0;
        return w;
    }
    if p >= 1.0 {
        let mut w = vec![0.0; k as usize + 1];
        w[k as usize] = 1.0;
        return w;
    }
    if k == 1 {
        return vec![1.0 - p, p];
    }
    let ln_p = p.ln();
    let ln_q = (-p).ln_1p();
    (0..=n)
        .map(|i| (ln_binomial(n, i) + i as f64 * ln_p + (n - i) as f64 * ln_q).exp())
        .collect()
}

/// Lower median of a non-empty slice.
pub fn lower_median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v[(v.len() - 1) / 2]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sum_exp_handles_extremes() {
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, 3.0]), 3.0);
        let v = log_sum_exp(&[1000.0, 1000.0]);
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert!((log_add(0.0, 0.0) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn normal_tails() {
        assert!((norm_cdf(0.0) - 0.5).abs() < 1e-16);
        // Φ(-10) = 7.619853024160527e-24
        assert!((norm_cdf(-10.0) / 7.619853024160527e-24 - 1.0).abs() < 1e-13);
        assert!((norm_sf(10.0) / 7.619853024160527e-24 - 1.0).abs() < 1e-13);
        let mid = norm_interval(-1.0, 1.0);
        assert!((mid - 0.6826894921370859).abs() < 1e-15);
        assert!(norm_quantile(1e-15) < -7.9);
    }

    #[test]
    fn binomial_small_cases() {
        let w = binomial_pmf(2, 0.5);
        assert_eq!(w.len(), 3);
        for (a, b) in w.iter().zip([0.25, 0.5, 0.25]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(binomial_pmf(3, 0.0), vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(binomial_pmf(1, 1.0), vec![0.0, 1.0]);
    }

    #[test]
    fn median_is_lower_on_ties() {
        assert_eq!(lower_median(&[1.0, 2.0, 100.0]), 2.0);
        assert_eq!(lower_median(&[4.0, 1.0, 3.0, 2.0]), 2.0);
    }
}
