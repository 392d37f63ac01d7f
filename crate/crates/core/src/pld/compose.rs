//! Self-composition by repeated convolution.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{AccountantConfig, PrivacyLossDistribution};
use crate::error::{invalid, Error, Result};
use crate::math::log_sum_exp;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComposeMethod {
    /// Direct convolution for small supports, FFT otherwise.
    Auto,
    /// Quadratic-time convolution with exponentiation by squaring.
    Direct,
    /// Frequency-domain power with a tail-bounded output window.
    Fft,
}

const DIRECT_MAX_BUCKETS: usize = 64;

impl PrivacyLossDistribution {
    /// Distribution of the sum of `t` independent copies.
    pub fn compose(&self, t: u64, cfg: &AccountantConfig) -> Result<Self> {
        if t == 0 {
            return Err(invalid("composition count must be at least 1"));
        }
        if t == 1 || self.masses.is_empty() {
            let mut out = self.clone();
            out.infinity_mass = compose_infinity(self.infinity_mass, t);
            return Ok(out);
        }
        let method = match cfg.compose_method {
            ComposeMethod::Auto if self.masses.len() <= DIRECT_MAX_BUCKETS && t <= 64 => {
                ComposeMethod::Direct
            }
            ComposeMethod::Auto => ComposeMethod::Fft,
            m => m,
        };
        match method {
            ComposeMethod::Direct => self.compose_direct(t, cfg),
            _ => self.compose_fft(t, cfg),
        }
    }

    fn compose_direct(&self, t: u64, cfg: &AccountantConfig) -> Result<Self> {
        let mut result: Option<Self> = None;
        let mut base = self.clone();
        let mut remaining = t;
        loop {
            if remaining & 1 == 1 {
                result = Some(match result {
                    None => base.clone(),
                    Some(r) => r.convolve(&base, cfg)?,
                });
            }
            remaining >>= 1;
            if remaining == 0 {
                break;
            }
            base = base.convolve(&base, cfg)?;
        }
        Ok(result.expect("t >= 1"))
    }

    /// Distribution of the sum of one draw from `self` and one from `other`.
    pub(crate) fn convolve(&self, other: &Self, cfg: &AccountantConfig) -> Result<Self> {
        if self.masses.is_empty() || other.masses.is_empty() {
            return Ok(Self::from_parts(
                self.grid_spacing,
                0,
                Vec::new(),
                1.0,
                self.pessimistic && other.pessimistic,
            ));
        }
        let len = self.masses.len() + other.masses.len() - 1;
        if len > cfg.bucket_cap {
            return Err(Error::CapacityExceeded {
                buckets: len,
                cap: cfg.bucket_cap,
            });
        }
        let mut out = vec![0.0; len];
        for (i, &a) in self.masses.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (o, &b) in out[i..].iter_mut().zip(&other.masses) {
                *o += a * b;
            }
        }
        let infinity = 1.0 - (1.0 - self.infinity_mass) * (1.0 - other.infinity_mass);
        let mut pld = Self::from_parts(
            self.grid_spacing,
            self.origin_index + other.origin_index,
            out,
            infinity,
            self.pessimistic && other.pessimistic,
        );
        pld.truncate_tails(cfg.truncation);
        Ok(pld)
    }

    /// Sweep at most `bound` mass off each end: the lower tail onto the
    /// lowest kept bucket, the upper tail to infinity.
    fn truncate_tails(&mut self, bound: f64) {
        if bound <= 0.0 || self.masses.len() < 2 {
            return;
        }
        let mut lower = 0.0;
        let mut lo = 0;
        while lo + 1 < self.masses.len() && lower + self.masses[lo] <= bound {
            lower += self.masses[lo];
            lo += 1;
        }
        let mut upper = 0.0;
        let mut hi = self.masses.len();
        while hi > lo + 1 && upper + self.masses[hi - 1] <= bound {
            upper += self.masses[hi - 1];
            hi -= 1;
        }
        self.masses.truncate(hi);
        self.masses.drain(..lo);
        self.origin_index += lo as i64;
        self.masses[0] += lower;
        self.infinity_mass = (self.infinity_mass + upper).min(1.0);
    }

    fn compose_fft(&self, t: u64, cfg: &AccountantConfig) -> Result<Self> {
        let finite: f64 = self.masses.iter().sum();
        let bound = cfg.truncation.max(f64::MIN_POSITIVE);
        let (lo, hi) = self_convolution_window(&self.masses, t, bound);
        let window = (hi - lo + 1) as usize;
        if window > cfg.bucket_cap {
            return Err(Error::CapacityExceeded {
                buckets: window,
                cap: cfg.bucket_cap,
            });
        }
        let n = window.max(self.masses.len()).next_power_of_two();
        let mut planner = FftPlanner::<f64>::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);

        let mut buf: Vec<Complex<f64>> = self
            .masses
            .iter()
            .map(|&m| Complex::new(m, 0.0))
            .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
            .take(n)
            .collect();
        forward.process(&mut buf);
        for z in buf.iter_mut() {
            *z = complex_pow(*z, t);
        }
        inverse.process(&mut buf);

        let scale = 1.0 / n as f64;
        let mut masses: Vec<f64> = (lo..=hi)
            .map(|j| (buf[j.rem_euclid(n as i64) as usize].re * scale).max(0.0))
            .collect();
        // mass beyond the window, bounded by the Chernoff argument
        let outside = bound * finite.powf(t as f64);
        masses[0] += outside;
        let infinity = compose_infinity(self.infinity_mass, t) + outside;
        Ok(Self::from_parts(
            self.grid_spacing,
            self.origin_index * t as i64 + lo,
            masses,
            infinity,
            self.pessimistic,
        ))
    }
}

/// `1 - (1 - m)^t`
fn compose_infinity(m: f64, t: u64) -> f64 {
    if m <= 0.0 {
        return 0.0;
    }
    -((t as f64) * (-m).ln_1p()).exp_m1()
}

/// `z^t` by repeated squaring.
fn complex_pow(z: Complex<f64>, mut t: u64) -> Complex<f64> {
    let mut base = z;
    let mut acc = Complex::new(1.0, 0.0);
    while t > 0 {
        if t & 1 == 1 {
            acc *= base;
        }
        t >>= 1;
        if t > 0 {
            base = base * base;
        }
    }
    acc
}

/// Index range (relative to `t` times the input origin) outside of which the
/// `t`-fold self-convolution of `probs` carries at most `bound` mass per side
/// (relative to its total), from Chernoff bounds over a grid of exponents.
fn self_convolution_window(probs: &[f64], t: u64, bound: f64) -> (i64, i64) {
    let total: f64 = probs.iter().sum();
    let last = (probs.len() - 1) as f64;
    let tf = t as f64;
    let mean = probs.iter().enumerate().map(|(i, p)| i as f64 * p).sum::<f64>() / total;
    let var = probs
        .iter()
        .enumerate()
        .map(|(i, p)| (i as f64 - mean).powi(2) * p)
        .sum::<f64>()
        / total;
    let std = var.sqrt().max(1.0);
    let ln_p: Vec<f64> = probs.iter().map(|p| (p / total).ln()).collect();
    let ln_bound = bound.ln();

    let log_mgf = |lambda: f64| -> f64 {
        let terms: Vec<f64> = ln_p
            .iter()
            .enumerate()
            .map(|(i, lp)| lp + lambda * (i as f64 - mean))
            .collect();
        log_sum_exp(&terms)
    };

    let mut upper = tf * last;
    let mut lower = 0.0f64;
    for k in -16..=16 {
        let lambda = 2f64.powi(k) / std;
        let up = tf * mean + (tf * log_mgf(lambda) - ln_bound) / lambda;
        if up.is_finite() {
            upper = upper.min(up.ceil());
        }
        let down = tf * mean - (tf * log_mgf(-lambda) - ln_bound) / lambda;
        if down.is_finite() {
            lower = lower.max(down.floor());
        }
    }
    let lower = lower.clamp(0.0, tf * last);
    let upper = upper.clamp(lower, tf * last);
    (lower as i64, upper as i64)
}
