//! Choosing group sizes: the median rule for ELS and Estimate-and-Double for ULS.

use std::collections::HashMap;

use rand::seq::{index, IndexedRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::math::lower_median;
use crate::mechanisms::{calibrate_sigma, EventFamily};
use crate::pld::{AccountantConfig, PrivacyParams};
use crate::sim::UserDataset;

/// Lower median of the user dataset sizes.
pub fn els_group_size_heuristic(data: &UserDataset) -> usize {
    let mut sizes = data.user_sizes();
    sizes.sort_unstable();
    sizes[(sizes.len() - 1) / 2]
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Statistic {
    #[default]
    Median,
    Max,
}

/// Estimated per-user gradient norm bound at one group size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEstimate {
    pub group_size: usize,
    pub value: f64,
    pub sample_size: usize,
    pub statistic: Statistic,
}

pub const DEFAULT_PROBE_USERS: usize = 128;

/// Sample `n_users` users and, for each, up to `G` of its examples; return
/// the chosen statistic of the norms of the subset-mean gradients at `theta`.
pub fn estimate_l_uls(
    data: &UserDataset,
    theta: &[f64],
    group_size: usize,
    n_users: usize,
    statistic: Statistic,
    seed: u64,
) -> Result<LipschitzEstimate> {
    if group_size == 0 {
        return Err(invalid("group size must be at least 1"));
    }
    if n_users == 0 || n_users > data.num_users() {
        return Err(invalid(format!(
            "probe size must lie in 1..={}, got {n_users}",
            data.num_users()
        )));
    }
    if theta.len() != data.dim() {
        return Err(invalid("parameter vector has the wrong dimension"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let users = index::sample(&mut rng, data.num_users(), n_users);
    let mut mean = vec![0.0; data.dim()];
    let norms: Vec<f64> = users
        .into_iter()
        .map(|u| {
            let size = data.user_size(u);
            let take = group_size.min(size);
            mean.fill(0.0);
            for j in index::sample(&mut rng, size, take) {
                for (m, z) in mean.iter_mut().zip(data.example(u, j)) {
                    *m += z / take as f64;
                }
            }
            // the gradient of ‖θ − z‖²/2 averages to θ minus the subset mean
            theta
                .iter()
                .zip(&mean)
                .map(|(t, m)| (t - m) * (t - m))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let value = match statistic {
        Statistic::Median => lower_median(&norms),
        Statistic::Max => norms.iter().copied().fold(0.0, f64::max),
    };
    Ok(LipschitzEstimate {
        group_size,
        value,
        sample_size: n_users,
        statistic,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    DoubleGroup,
    DoubleCohort,
    /// The cohort could not double without exceeding the user count.
    ForcedDoubleGroup,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoublingStep {
    pub step: usize,
    #[serde(rename = "G")]
    pub group_size: usize,
    #[serde(rename = "M")]
    pub cohort: usize,
    pub tau_g: Option<f64>,
    pub tau_m: Option<f64>,
    pub decision: Decision,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoublingOutcome {
    pub group_size: usize,
    pub cohort: usize,
    pub trace: Vec<DoublingStep>,
}

/// Inputs of [`estimate_and_double`] besides the data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoublingConfig {
    pub g0: usize,
    pub m0: usize,
    pub budget: usize,
    pub target: PrivacyParams,
    pub steps: u64,
    pub probe_users: usize,
    pub seed: u64,
}

pub const TAU_TIE: f64 = 1e-9;

/// Greedily double the group size or the cohort until `G M = B`, picking the
/// one whose doubling shrinks its factor of the per-user noise scale more.
///
/// `τ_G = L(2G) / L(G)`. The cohort factor is the noise standard deviation
/// of the averaged update, `σ(M) / M`, so `τ_M = σ(2M) / (2 σ(M))`.
/// Ties go to the cohort.
pub fn estimate_and_double(
    data: &UserDataset,
    theta: &[f64],
    config: &DoublingConfig,
    accountant: &AccountantConfig,
) -> Result<DoublingOutcome> {
    let DoublingConfig {
        g0,
        m0,
        budget,
        target,
        steps,
        probe_users,
        seed,
    } = *config;
    for (name, v) in [("g0", g0), ("m0", m0), ("budget", budget)] {
        if !v.is_power_of_two() {
            return Err(invalid(format!("{name} must be a power of two, got {v}")));
        }
    }
    if g0 * m0 > budget {
        return Err(invalid("initial G * M exceeds the budget"));
    }
    let users = data.num_users();
    if m0 > users {
        return Err(invalid("initial cohort exceeds the number of users"));
    }
    let probe_users = probe_users.min(users);
    let mut l_cache: HashMap<usize, f64> = HashMap::new();
    let mut l_of = |g: usize| -> Result<f64> {
        if let Some(&v) = l_cache.get(&g) {
            return Ok(v);
        }
        // same user sample for every group size
        let v = estimate_l_uls(data, theta, g, probe_users, Statistic::Median, seed)?.value;
        l_cache.insert(g, v);
        Ok(v)
    };
    let mut sigma_cache: HashMap<usize, f64> = HashMap::new();
    let mut sigma_of = |m: usize| -> Result<f64> {
        if let Some(&v) = sigma_cache.get(&m) {
            return Ok(v);
        }
        let family = EventFamily::Uls {
            q: m as f64 / users as f64,
            steps,
        };
        let v = calibrate_sigma(&family, target, accountant)?;
        sigma_cache.insert(m, v);
        Ok(v)
    };

    let (mut g, mut m) = (g0, m0);
    let mut trace = Vec::new();
    while g * m < budget {
        let step = trace.len();
        if 2 * m > users {
            trace.push(DoublingStep {
                step,
                group_size: g,
                cohort: m,
                tau_g: None,
                tau_m: None,
                decision: Decision::ForcedDoubleGroup,
            });
            g *= 2;
            continue;
        }
        let l_g = l_of(g)?;
        let tau_g = if l_g > 0.0 { l_of(2 * g)? / l_g } else { 1.0 };
        let tau_m = sigma_of(2 * m)? / (2.0 * sigma_of(m)?);
        let decision = if tau_g < tau_m - TAU_TIE {
            Decision::DoubleGroup
        } else {
            Decision::DoubleCohort
        };
        trace.push(DoublingStep {
            step,
            group_size: g,
            cohort: m,
            tau_g: Some(tau_g),
            tau_m: Some(tau_m),
            decision,
        });
        match decision {
            Decision::DoubleCohort => m *= 2,
            _ => g *= 2,
        }
    }
    Ok(DoublingOutcome {
        group_size: g,
        cohort: m,
        trace,
    })
}

/// Power-of-two `(G, M)` with `G M = B`, `G ≤ max_group` and `M ≤ users`.
pub fn feasible_allocations(budget: usize, max_group: usize, users: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut g = 1;
    while g <= budget && g <= max_group {
        if budget.is_multiple_of(g) && budget / g <= users {
            out.push((g, budget / g));
        }
        g *= 2;
    }
    out
}

/// Uniformly random feasible allocation.
pub fn random_allocation(
    budget: usize,
    max_group: usize,
    users: usize,
    seed: u64,
) -> Option<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    feasible_allocations(budget, max_group, users)
        .choose(&mut rng)
        .copied()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset(sizes: &[usize]) -> UserDataset {
        let users = sizes.iter().map(|&s| vec![1.0; s]).collect();
        UserDataset::new(1, vec![0.0], users).unwrap()
    }

    #[test]
    fn median_group_size() {
        assert_eq!(els_group_size_heuristic(&dataset(&[16, 16, 16])), 16);
        assert_eq!(els_group_size_heuristic(&dataset(&[1, 2, 100])), 2);
        assert_eq!(els_group_size_heuristic(&dataset(&[1, 2, 3, 100])), 2);
    }

    #[test]
    fn identical_examples_give_exact_norm() {
        let data = UserDataset::new(2, vec![0.0, 0.0], vec![vec![3.0, 4.0, 3.0, 4.0]; 5]).unwrap();
        for g in [1, 2, 8] {
            let est = estimate_l_uls(&data, &[0.0, 0.0], g, 5, Statistic::Median, 3).unwrap();
            assert!((est.value - 5.0).abs() < 1e-12);
        }
    }

    #[test]
    fn allocations() {
        assert_eq!(feasible_allocations(64, 16, 256), vec![(1, 64), (2, 32), (4, 16), (8, 8), (16, 4)]);
        assert_eq!(feasible_allocations(1024, 16, 256), vec![(4, 256), (8, 128), (16, 64)]);
        let r = random_allocation(64, 16, 256, 5).unwrap();
        assert!(feasible_allocations(64, 16, 256).contains(&r));
    }

    #[test]
    fn rejects_non_powers_of_two() {
        let data = dataset(&[4; 8]);
        let cfg = DoublingConfig {
            g0: 3,
            m0: 1,
            budget: 8,
            target: PrivacyParams::new(1.0, 1e-6).unwrap(),
            steps: 10,
            probe_users: 8,
            seed: 0,
        };
        assert!(estimate_and_double(&data, &[0.0], &cfg, &AccountantConfig::default()).is_err());
    }
}
