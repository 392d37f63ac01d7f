//! Integer-order Rényi divergences of Mixture-of-Gaussians mechanisms.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_factorial;

use crate::error::{invalid, Error, Result};
use crate::math::{binomial_pmf, log_sum_exp};
use crate::pld::MoGMechanism;

/// Largest number of multisets [`renyi_mog`] will enumerate.
pub const ENUMERATION_CAP: u128 = 10_000_000;

/// Number of multisets of size `alpha` drawn from `n` kinds, `C(n + α - 1, α)`.
fn multiset_count(n: usize, alpha: u32) -> u128 {
    let mut c: u128 = 1;
    for i in 1..=alpha as u128 {
        c = c * (n as u128 - 1 + i) / i;
        if c > u128::MAX / 1024 {
            return u128::MAX;
        }
    }
    c
}

/// `R_α(P, Q)` for `P = N(X, σ²)`, `Q = N(0, σ²)` by expanding
/// `E_Q[(P/Q)^α]` over multisets of the support of `X`.
pub fn renyi_mog(mech: &MoGMechanism, alpha: u32) -> Result<f64> {
    if alpha < 2 {
        return Err(invalid(format!("alpha must be an integer >= 2, got {alpha}")));
    }
    let support: Vec<(f64, f64)> = mech
        .sensitivities()
        .iter()
        .zip(mech.weights())
        .filter(|(_, &w)| w > 0.0)
        .map(|(&c, &w)| (c, w.ln()))
        .collect();
    let count = multiset_count(support.len(), alpha);
    if count > ENUMERATION_CAP {
        return Err(Error::TooLarge {
            count,
            cap: ENUMERATION_CAP,
        });
    }
    let two_var = 2.0 * mech.sigma() * mech.sigma();
    let ln_alpha_fact = ln_factorial(alpha as u64);
    let mut terms = Vec::with_capacity(count as usize);
    let mut walk = |coef: f64, sum: f64, sum_sq: f64| {
        terms.push(ln_alpha_fact + coef + (sum * sum - sum_sq) / two_var);
    };
    enumerate(&support, alpha, 0.0, 0.0, 0.0, &mut walk);
    Ok(log_sum_exp(&terms) / (alpha - 1) as f64)
}

/// Visit every way of splitting `left` draws among `support`, accumulating
/// `Σ n ln w - ln n!`, `Σ n c` and `Σ n c²`.
fn enumerate(
    support: &[(f64, f64)],
    left: u32,
    coef: f64,
    sum: f64,
    sum_sq: f64,
    visit: &mut impl FnMut(f64, f64, f64),
) {
    let Some((&(c, ln_w), rest)) = support.split_first() else {
        if left == 0 {
            visit(coef, sum, sum_sq);
        }
        return;
    };
    if rest.is_empty() {
        let n = left as f64;
        visit(
            coef + n * ln_w - ln_factorial(left as u64),
            sum + n * c,
            sum_sq + n * c * c,
        );
        return;
    }
    for k in 0..=left {
        let n = k as f64;
        enumerate(
            rest,
            left - k,
            coef + n * ln_w - ln_factorial(k as u64),
            sum + n * c,
            sum_sq + n * c * c,
            visit,
        );
    }
}

/// `R_α(Q, P)` by trapezoid quadrature of `∫ q^α p^{1-α}`.
pub fn renyi_mog_reverse(mech: &MoGMechanism, alpha: u32) -> Result<f64> {
    if alpha < 2 {
        return Err(invalid(format!("alpha must be an integer >= 2, got {alpha}")));
    }
    let sigma = mech.sigma();
    let c_max = *mech.sensitivities().last().expect("non-empty");
    let a = alpha as f64;
    // Q^α P^{1-α} = Q exp(-(α-1) ℓ); its bulk sits near the Gaussian bulk of Q
    // shifted by at most (α-1) c_max.
    let lo = -(a - 1.0) * c_max - 40.0 * sigma;
    let hi = c_max + 40.0 * sigma;
    let n = 200_000;
    let h = (hi - lo) / n as f64;
    let terms: Vec<f64> = (0..=n)
        .map(|i| {
            let x = lo + i as f64 * h;
            let ln_q = -x * x / (2.0 * sigma * sigma);
            let edge = if i == 0 || i == n { 0.5f64.ln() } else { 0.0 };
            edge + ln_q - (a - 1.0) * mech.privacy_loss(x)
        })
        .collect();
    let ln_norm = (h / (sigma * (2.0 * std::f64::consts::PI).sqrt())).ln();
    Ok((log_sum_exp(&terms) + ln_norm) / (a - 1.0))
}

fn bin_mixture(k: u32, p: f64, sigma: f64) -> Result<MoGMechanism> {
    let w = binomial_pmf(k, p);
    let total: f64 = w.iter().sum();
    MoGMechanism::new(
        sigma,
        (0..=k).map(f64::from).collect(),
        w.into_iter().map(|x| x / total).collect(),
    )
}

/// Both sides of `R_α(N(Bin(K,p), (Kσ)²) ‖ N(0, (Kσ)²)) ≤ R_α(N(Bern(p), σ²) ‖ N(0, σ²))`,
/// plus the same comparison with the arguments swapped.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupScalingCheck {
    pub alpha: u32,
    #[serde(rename = "K")]
    pub group_size: u32,
    pub p: f64,
    pub sigma: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
    pub reverse_lhs: f64,
    pub reverse_rhs: f64,
    pub reverse_holds: bool,
}

pub const GROUP_SCALING_SLACK: f64 = 1e-10;
const REVERSE_SLACK: f64 = 1e-8;

pub fn check_group_scaling(alpha: u32, group_size: u32, p: f64, sigma: f64) -> Result<GroupScalingCheck> {
    if group_size == 0 {
        return Err(invalid("group size must be at least 1"));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(invalid(format!("p must lie in [0, 1], got {p}")));
    }
    let grouped = bin_mixture(group_size, p, group_size as f64 * sigma)?;
    let single = bin_mixture(1, p, sigma)?;
    let lhs = renyi_mog(&grouped, alpha)?;
    let rhs = renyi_mog(&single, alpha)?;
    let reverse_lhs = renyi_mog_reverse(&grouped, alpha)?;
    let reverse_rhs = renyi_mog_reverse(&single, alpha)?;
    Ok(GroupScalingCheck {
        alpha,
        group_size,
        p,
        sigma,
        lhs,
        rhs,
        holds: lhs <= rhs + GROUP_SCALING_SLACK,
        reverse_lhs,
        reverse_rhs,
        reverse_holds: reverse_lhs <= reverse_rhs + REVERSE_SLACK,
    })
}

pub const GROUP_SCALING_CSV_HEADER: &str =
    "alpha,K,p,sigma,lhs,rhs,holds,reverse_lhs,reverse_rhs,reverse_holds";

/// `(α, K, p, σ)` points of the default grid.
pub fn default_group_scaling_grid() -> Vec<(u32, u32, f64, f64)> {
    let mut grid = Vec::new();
    for alpha in [2, 3, 4, 8] {
        for k in [2, 4, 8, 16] {
            for p in [0.01, 0.1, 0.5] {
                for sigma in [0.5, 1.0, 2.0] {
                    grid.push((alpha, k, p, sigma));
                }
            }
        }
    }
    grid
}

/// Run [`check_group_scaling`] over a grid in parallel, keeping grid order.
pub fn check_group_scaling_grid(grid: &[(u32, u32, f64, f64)]) -> Result<Vec<GroupScalingCheck>> {
    grid.par_iter()
        .map(|&(alpha, k, p, sigma)| check_group_scaling(alpha, k, p, sigma))
        .collect()
}
