//! Per-iteration noise variance of ELS and ULS under a fixed compute budget.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::mechanisms::{calibrate_sigma, EventFamily};
use crate::pld::{AccountantConfig, PrivacyParams};

/// Compute budget and data shape shared by both algorithms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetSetting {
    /// Number of users `N`.
    pub users: u64,
    /// Examples per user `K`.
    pub examples_per_user: u32,
    pub steps: u64,
    /// Expected gradients per iteration `B`.
    pub budget: u64,
    /// Expected ULS cohort `M`; the ULS group size is `B / M`.
    pub cohort: u64,
    pub g_els: u32,
    pub dim: u32,
    pub l_els: f64,
    pub l_uls: f64,
    pub target: PrivacyParams,
}

impl BudgetSetting {
    pub fn g_uls(&self) -> f64 {
        self.budget as f64 / self.cohort as f64
    }

    /// Example sampling probability `B / (G_ELS N)`.
    pub fn p(&self) -> f64 {
        self.budget as f64 / (self.g_els as f64 * self.users as f64)
    }

    /// User sampling probability `M / N`.
    pub fn q(&self) -> f64 {
        self.cohort as f64 / self.users as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.users == 0 || self.steps == 0 || self.budget == 0 || self.cohort == 0 {
            return Err(invalid("users, steps, budget and cohort must be positive"));
        }
        if self.g_els == 0 || self.g_els > self.examples_per_user {
            return Err(invalid("ELS group size must lie in 1..=K"));
        }
        if self.cohort > self.budget {
            return Err(invalid("cohort cannot exceed the compute budget"));
        }
        if !(0.0..=1.0).contains(&self.p()) || !(0.0..=1.0).contains(&self.q()) {
            return Err(invalid("sampling probabilities must lie in [0, 1]"));
        }
        if !(self.l_els > 0.0 && self.l_uls > 0.0) {
            return Err(invalid("Lipschitz bounds must be positive"));
        }
        if self.l_uls > self.l_els {
            return Err(invalid("per-user bound cannot exceed the per-example bound"));
        }
        Ok(())
    }

    pub fn els_family(&self) -> EventFamily {
        EventFamily::Els {
            p: self.p(),
            group_size: self.g_els,
            steps: self.steps,
        }
    }

    pub fn uls_family(&self) -> EventFamily {
        EventFamily::Uls {
            q: self.q(),
            steps: self.steps,
        }
    }
}

/// `d (σ L / B)²`, the ELS noise variance for a given noise multiplier.
pub fn els_variance_at(s: &BudgetSetting, sigma_els: f64) -> f64 {
    s.dim as f64 * (sigma_els * s.l_els / s.budget as f64).powi(2)
}

/// `d (σ L_ULS / M)²`.
pub fn uls_variance_at(s: &BudgetSetting, sigma_uls: f64) -> f64 {
    s.dim as f64 * (sigma_uls * s.l_uls / s.cohort as f64).powi(2)
}

pub fn noise_variance_els(s: &BudgetSetting, cfg: &AccountantConfig) -> Result<f64> {
    s.validate()?;
    let sigma = calibrate_sigma(&s.els_family(), s.target, cfg)?;
    Ok(els_variance_at(s, sigma))
}

pub fn noise_variance_uls(s: &BudgetSetting, cfg: &AccountantConfig) -> Result<f64> {
    s.validate()?;
    let sigma = calibrate_sigma(&s.uls_family(), s.target, cfg)?;
    Ok(uls_variance_at(s, sigma))
}

/// How the per-user bound relates to the per-example one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LUlsRule {
    /// `L_ULS = L_ELS`: every gradient of a user points the same way.
    Equal,
    /// `L_ULS = L_ELS / sqrt(G_ULS)`: orthogonal gradients within a user.
    InverseSqrt,
}

impl LUlsRule {
    pub fn apply(self, l_els: f64, g_uls: f64) -> f64 {
        match self {
            LUlsRule::Equal => l_els,
            LUlsRule::InverseSqrt => l_els / g_uls.sqrt(),
        }
    }
}

/// One row of the variance table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub budget: u64,
    pub cohort: u64,
    pub epsilon: f64,
    pub sigma_els: f64,
    pub sigma_uls: f64,
    pub var_els: f64,
    pub var_uls_equal: f64,
    pub var_uls_diverse: f64,
}

pub const VARIANCE_CSV_HEADER: &str = "budget,cohort,epsilon,var_els,var_uls_equal,var_uls_diverse";

/// Calibrate every distinct event once, in parallel, in input order.
pub fn calibrate_all(
    requests: &[(EventFamily, PrivacyParams)],
    cfg: &AccountantConfig,
) -> Result<Vec<f64>> {
    let mut unique: Vec<(EventFamily, PrivacyParams)> = Vec::new();
    for r in requests {
        if !unique.contains(r) {
            unique.push(*r);
        }
    }
    let sigmas: Vec<f64> = unique
        .par_iter()
        .map(|(family, target)| calibrate_sigma(family, *target, cfg))
        .collect::<Result<_>>()?;
    Ok(requests
        .iter()
        .map(|r| sigmas[unique.iter().position(|u| u == r).expect("present")])
        .collect())
}

/// Variance rows for every setting; the `l_uls` field of each setting is
/// ignored in favour of the two [`LUlsRule`] regimes.
pub fn variance_curves(grid: &[BudgetSetting], cfg: &AccountantConfig) -> Result<Vec<VarianceRow>> {
    for s in grid {
        BudgetSetting { l_uls: s.l_els, ..*s }.validate()?;
    }
    let requests: Vec<_> = grid
        .iter()
        .flat_map(|s| [(s.els_family(), s.target), (s.uls_family(), s.target)])
        .collect();
    let sigmas = calibrate_all(&requests, cfg)?;
    Ok(grid
        .iter()
        .zip(sigmas.chunks(2))
        .map(|(s, pair)| {
            let (sigma_els, sigma_uls) = (pair[0], pair[1]);
            let with_rule = |rule: LUlsRule| BudgetSetting {
                l_uls: rule.apply(s.l_els, s.g_uls()),
                ..*s
            };
            VarianceRow {
                budget: s.budget,
                cohort: s.cohort,
                epsilon: s.target.epsilon,
                sigma_els,
                sigma_uls,
                var_els: els_variance_at(s, sigma_els),
                var_uls_equal: uls_variance_at(&with_rule(LUlsRule::Equal), sigma_uls),
                var_uls_diverse: uls_variance_at(&with_rule(LUlsRule::InverseSqrt), sigma_uls),
            }
        })
        .collect())
}

/// The grid behind the budget sweep: `N = 1024`, `K = 32`, `T = 1000`,
/// `L_ELS = 10`, `G_ELS = K`, fixed cohort, `G_ULS = B / M` up to `K`.
pub fn default_budget_grid(cohort: u64, epsilons: &[f64], delta: f64) -> Result<Vec<BudgetSetting>> {
    let mut grid = Vec::new();
    for &epsilon in epsilons {
        let target = PrivacyParams::new(epsilon, delta)?;
        let mut g = 1;
        while g <= 32 {
            grid.push(BudgetSetting {
                users: 1024,
                examples_per_user: 32,
                steps: 1000,
                budget: cohort * g,
                cohort,
                g_els: 32,
                dim: 1,
                l_els: 10.0,
                l_uls: 10.0,
                target,
            });
            g *= 2;
        }
    }
    Ok(grid)
}

pub const DEFAULT_EPSILONS: [f64; 5] = [0.25, 1.0, 4.0, 16.0, 64.0];
