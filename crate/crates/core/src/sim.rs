//! DP-SGD with example-level and user-level sampling on a synthetic
//! mean-estimation task, with seeded multi-trial sweeps.
//!
//! Both algorithms sample by shuffling with fixed batch or cohort sizes, while
//! the noise is calibrated with Poisson-sampling accounting.

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::mechanisms::EventFamily;
use crate::pld::{AccountantConfig, PrivacyParams};
use crate::variance::calibrate_all;

/// Caveat attached to every simulation output.
pub const SAMPLING_CAVEAT: &str = "noise is calibrated for Poisson sampling but training uses shuffled fixed-size batches and cohorts; reported privacy is not a guarantee for the simulated runs";

/// A generator seeded from `master` on its own ChaCha stream.
pub fn stream_rng(master: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng
}

/// Generative parameters of the mean-estimation task.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub users: usize,
    pub examples_per_user: usize,
    pub dim: usize,
    /// Spread of user means around the population mean.
    pub sigma1: f64,
    /// Spread of examples around their user's mean.
    pub sigma2: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            users: 256,
            examples_per_user: 16,
            dim: 32,
            sigma1: 1.0,
            sigma2: 1.0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.users == 0 || self.examples_per_user == 0 || self.dim == 0 {
            return Err(invalid("users, examples per user and dimension must be positive"));
        }
        if !(self.sigma1 >= 0.0 && self.sigma2 >= 0.0) {
            return Err(invalid("standard deviations must be non-negative"));
        }
        Ok(())
    }
}

/// Per-user example sets, each stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct UserDataset {
    dim: usize,
    true_mean: Vec<f64>,
    users: Vec<Vec<f64>>,
}

impl UserDataset {
    /// `users[u]` holds `|D_u| * dim` values.
    pub fn new(dim: usize, true_mean: Vec<f64>, users: Vec<Vec<f64>>) -> Result<Self> {
        if dim == 0 || true_mean.len() != dim {
            return Err(invalid("true mean must have the dataset dimension"));
        }
        if users.is_empty() {
            return Err(invalid("dataset needs at least one user"));
        }
        if users.iter().any(|u| u.is_empty() || u.len() % dim != 0) {
            return Err(invalid("every user needs a whole, non-zero number of examples"));
        }
        Ok(Self {
            dim,
            true_mean,
            users,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn true_mean(&self) -> &[f64] {
        &self.true_mean
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn user_size(&self, u: usize) -> usize {
        self.users[u].len() / self.dim
    }

    pub fn example(&self, u: usize, j: usize) -> &[f64] {
        &self.users[u][j * self.dim..(j + 1) * self.dim]
    }

    pub fn user_sizes(&self) -> Vec<usize> {
        (0..self.num_users()).map(|u| self.user_size(u)).collect()
    }

    /// Mean over all examples of all users.
    pub fn grand_mean(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim];
        let mut n = 0usize;
        for u in &self.users {
            for x in u.chunks_exact(self.dim) {
                add_to(&mut acc, x, 1.0);
                n += 1;
            }
        }
        acc.iter_mut().for_each(|a| *a /= n as f64);
        acc
    }
}

fn normal_vec(rng: &mut impl Rng, center: &[f64], scale: f64) -> Vec<f64> {
    center
        .iter()
        .map(|c| c + scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// `μ ~ N(0, I)`, `μ_u ~ N(μ, σ1² I)`, `x_{u,j} ~ N(μ_u, σ2² I)`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<UserDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mu = normal_vec(&mut rng, &vec![0.0; spec.dim], 1.0);
    let users = (0..spec.users)
        .map(|_| {
            let mu_u = normal_vec(&mut rng, &mu, spec.sigma1);
            (0..spec.examples_per_user)
                .flat_map(|_| normal_vec(&mut rng, &mu_u, spec.sigma2))
                .collect()
        })
        .collect();
    UserDataset::new(spec.dim, mu, users)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn add_to(acc: &mut [f64], v: &[f64], scale: f64) {
    for (a, x) in acc.iter_mut().zip(v) {
        *a += scale * x;
    }
}

/// `v · min(1, C / ‖v‖)`.
pub fn clip(v: &[f64], c: f64) -> Vec<f64> {
    let mut out = v.to_vec();
    clip_in_place(&mut out, c);
    out
}

fn clip_in_place(v: &mut [f64], c: f64) {
    let n = norm(v);
    if n > c {
        let s = c / n;
        v.iter_mut().for_each(|x| *x *= s);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Els,
    Uls,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Els => "els",
            Variant::Uls => "uls",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub variant: Variant,
    pub steps: u64,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub group_size: usize,
    /// Batch size `B` for ELS, cohort size `M` for ULS.
    pub batch: usize,
    pub seed: u64,
}

impl TrainConfig {
    fn validate(&self, data: &UserDataset) -> Result<()> {
        if self.steps == 0 || self.group_size == 0 || self.batch == 0 {
            return Err(invalid("steps, group size and batch must be positive"));
        }
        if !(self.learning_rate > 0.0) || !(self.clip_norm > 0.0) {
            return Err(invalid("learning rate and clip norm must be positive"));
        }
        if self.variant == Variant::Uls && self.batch > data.num_users() {
            return Err(invalid(format!(
                "cohort size {} exceeds the {} users",
                self.batch,
                data.num_users()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub final_params: Vec<f64>,
    /// `‖θ − μ‖² / d` against the population mean.
    pub eval_loss: f64,
}

fn finish(data: &UserDataset, theta: Vec<f64>) -> RunResult {
    let d = data.dim() as f64;
    let eval_loss = theta
        .iter()
        .zip(data.true_mean())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / d;
    RunResult {
        final_params: theta,
        eval_loss,
    }
}

/// `θ ← θ − η (g_sum + N(0, C²σ² I)) / denom`.
fn noisy_step(
    theta: &mut [f64],
    g_sum: &[f64],
    cfg: &TrainConfig,
    sigma: f64,
    denom: f64,
    rng: &mut ChaCha8Rng,
) {
    let noise_sd = cfg.clip_norm * sigma;
    for (t, g) in theta.iter_mut().zip(g_sum) {
        let noise = if noise_sd > 0.0 {
            noise_sd * rng.sample::<f64, _>(StandardNormal)
        } else {
            0.0
        };
        *t -= cfg.learning_rate * (g + noise) / denom;
    }
}

const CLIP_SLACK: f64 = 1e-9;

/// Algorithm with example-level sampling. `f(θ, z) = ‖θ − z‖² / 2`.
pub fn dp_sgd_els(data: &UserDataset, cfg: &TrainConfig, sigma: f64) -> Result<RunResult> {
    if cfg.variant != Variant::Els {
        return Err(invalid("expected an ELS configuration"));
    }
    cfg.validate(data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut pool: Vec<(usize, usize)> = Vec::new();
    for u in 0..data.num_users() {
        let size = data.user_size(u);
        let take = cfg.group_size.min(size);
        pool.extend(index::sample(&mut rng, size, take).into_iter().map(|j| (u, j)));
    }
    if cfg.batch > pool.len() {
        return Err(invalid(format!(
            "batch size {} exceeds the {} examples kept",
            cfg.batch,
            pool.len()
        )));
    }
    let d = data.dim();
    let mut theta = vec![0.0; d];
    let mut g_sum = vec![0.0; d];
    let mut grad = vec![0.0; d];
    pool.shuffle(&mut rng);
    let mut pos = 0;
    for _ in 0..cfg.steps {
        if pos + cfg.batch > pool.len() {
            pool.shuffle(&mut rng);
            pos = 0;
        }
        g_sum.fill(0.0);
        for &(u, j) in &pool[pos..pos + cfg.batch] {
            for ((g, t), z) in grad.iter_mut().zip(&theta).zip(data.example(u, j)) {
                *g = t - z;
            }
            clip_in_place(&mut grad, cfg.clip_norm);
            debug_assert!(norm(&grad) <= cfg.clip_norm * (1.0 + CLIP_SLACK));
            add_to(&mut g_sum, &grad, 1.0);
        }
        pos += cfg.batch;
        noisy_step(&mut theta, &g_sum, cfg, sigma, cfg.batch as f64, &mut rng);
    }
    Ok(finish(data, theta))
}

/// Mean of `min(G, |D_u|)` examples of user `u`, drawn without replacement.
fn subset_mean(data: &UserDataset, u: usize, g: usize, rng: &mut ChaCha8Rng, out: &mut [f64]) {
    let size = data.user_size(u);
    let take = g.min(size);
    out.fill(0.0);
    for j in index::sample(rng, size, take) {
        add_to(out, data.example(u, j), 1.0 / take as f64);
    }
}

/// Algorithm with user-level sampling.
pub fn dp_sgd_uls(data: &UserDataset, cfg: &TrainConfig, sigma: f64) -> Result<RunResult> {
    if cfg.variant != Variant::Uls {
        return Err(invalid("expected a ULS configuration"));
    }
    cfg.validate(data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = data.dim();
    let mut theta = vec![0.0; d];
    let mut g_sum = vec![0.0; d];
    let mut grad = vec![0.0; d];
    let mut order: Vec<usize> = (0..data.num_users()).collect();
    order.shuffle(&mut rng);
    let mut pos = 0;
    for _ in 0..cfg.steps {
        if pos + cfg.batch > order.len() {
            order.shuffle(&mut rng);
            pos = 0;
        }
        g_sum.fill(0.0);
        for &u in &order[pos..pos + cfg.batch] {
            // the gradient of the subset mean loss is θ minus the subset mean
            subset_mean(data, u, cfg.group_size, &mut rng, &mut grad);
            for (g, t) in grad.iter_mut().zip(&theta) {
                *g = t - *g;
            }
            clip_in_place(&mut grad, cfg.clip_norm);
            debug_assert!(norm(&grad) <= cfg.clip_norm * (1.0 + CLIP_SLACK));
            add_to(&mut g_sum, &grad, 1.0);
        }
        pos += cfg.batch;
        noisy_step(&mut theta, &g_sum, cfg, sigma, cfg.batch as f64, &mut rng);
    }
    Ok(finish(data, theta))
}

pub fn run(data: &UserDataset, cfg: &TrainConfig, sigma: f64) -> Result<RunResult> {
    match cfg.variant {
        Variant::Els => dp_sgd_els(data, cfg, sigma),
        Variant::Uls => dp_sgd_uls(data, cfg, sigma),
    }
}

/// `2^-6 .. 2^3`.
pub fn default_lr_grid() -> Vec<f64> {
    (-6..=3).map(|k| 2f64.powi(k)).collect()
}

/// `2^-2 .. 2^5`.
pub fn default_clip_grid() -> Vec<f64> {
    (-2..=5).map(|k| 2f64.powi(k)).collect()
}

/// Everything a sweep varies or holds fixed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub data: SyntheticSpec,
    pub variant: Variant,
    pub target: PrivacyParams,
    pub steps: u64,
    /// Compute budget `B`; ULS uses cohorts of `B / G`.
    pub budget: usize,
    pub group_sizes: Vec<usize>,
    pub lr_grid: Vec<f64>,
    pub clip_grid: Vec<f64>,
    pub trials: usize,
    pub master_seed: u64,
}

/// Aggregated trials of one `(G, η, C)` cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub variant: Variant,
    pub group_size: usize,
    /// `B` for ELS, `M` for ULS.
    pub batch: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub sigma: f64,
    pub mean_loss: f64,
    pub stderr: f64,
    pub losses: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub best: SweepCell,
    pub table: Vec<SweepCell>,
}

impl SweepResult {
    /// Best cell among those with the given group size.
    pub fn best_for_group(&self, group_size: usize) -> Option<&SweepCell> {
        self.table
            .iter()
            .filter(|c| c.group_size == group_size)
            .min_by(|a, b| a.mean_loss.total_cmp(&b.mean_loss))
    }
}

pub const SWEEP_CSV_HEADER: &str = "variant,G,M_or_B,eta,C,sigma,mean_loss,stderr";

/// Mean and standard error of the mean.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

impl SweepConfig {
    /// Batch or cohort size for group size `g`.
    pub fn batch_for(&self, g: usize) -> Result<usize> {
        match self.variant {
            Variant::Els => Ok(self.budget),
            Variant::Uls => {
                if g == 0 || !self.budget.is_multiple_of(g) {
                    return Err(invalid(format!("group size {g} must divide budget {}", self.budget)));
                }
                Ok(self.budget / g)
            }
        }
    }

    /// Event whose calibrated noise protects a run with group size `g`.
    pub fn family_for(&self, g: usize) -> Result<EventFamily> {
        let n = self.data.users as f64;
        Ok(match self.variant {
            Variant::Els => {
                let kept = g.min(self.data.examples_per_user);
                EventFamily::Els {
                    p: self.budget as f64 / (kept as f64 * n),
                    group_size: kept as u32,
                    steps: self.steps,
                }
            }
            Variant::Uls => EventFamily::Uls {
                q: self.batch_for(g)? as f64 / n,
                steps: self.steps,
            },
        })
    }

    fn validate(&self) -> Result<()> {
        self.data.validate()?;
        if self.trials == 0 {
            return Err(invalid("trials must be at least 1"));
        }
        if self.group_sizes.is_empty() || self.lr_grid.is_empty() || self.clip_grid.is_empty() {
            return Err(invalid("sweep grids must be non-empty"));
        }
        Ok(())
    }
}

/// Seed of the synthetic dataset used by trial `i`.
pub fn trial_data_seed(master: u64, trial: usize) -> u64 {
    stream_rng(master, 2 * trial as u64).random()
}

/// Seed of the training randomness of trial `i`, shared by every cell.
pub fn trial_train_seed(master: u64, trial: usize) -> u64 {
    stream_rng(master, 2 * trial as u64 + 1).random()
}

/// Run every `(G, η, C)` cell for `trials` trials. Trial `i` draws its own
/// dataset and training seed from the master seed, and every cell of the
/// sweep sees that same dataset and seed.
pub fn sweep(config: &SweepConfig, accountant: &AccountantConfig) -> Result<SweepResult> {
    config.validate()?;
    let families: Vec<_> = config
        .group_sizes
        .iter()
        .map(|&g| Ok((config.family_for(g)?, config.target)))
        .collect::<Result<_>>()?;
    let sigmas = calibrate_all(&families, accountant)?;
    sweep_with_sigmas(config, &sigmas)
}

/// As [`sweep`], with one noise multiplier per group size supplied.
pub fn sweep_with_sigmas(config: &SweepConfig, sigmas: &[f64]) -> Result<SweepResult> {
    config.validate()?;
    if sigmas.len() != config.group_sizes.len() {
        return Err(invalid("need one noise multiplier per group size"));
    }
    let mut cells: Vec<TrainConfig> = Vec::new();
    let mut cell_sigma = Vec::new();
    for (&g, &sigma) in config.group_sizes.iter().zip(sigmas) {
        let batch = config.batch_for(g)?;
        for &learning_rate in &config.lr_grid {
            for &clip_norm in &config.clip_grid {
                cells.push(TrainConfig {
                    variant: config.variant,
                    steps: config.steps,
                    learning_rate,
                    clip_norm,
                    group_size: g,
                    batch,
                    seed: 0,
                });
                cell_sigma.push(sigma);
            }
        }
    }
    // losses[trial][cell]
    let losses: Vec<Vec<f64>> = (0..config.trials)
        .into_par_iter()
        .map(|trial| {
            let spec = SyntheticSpec {
                seed: trial_data_seed(config.master_seed, trial),
                ..config.data
            };
            let data = generate_synthetic(&spec)?;
            let seed = trial_train_seed(config.master_seed, trial);
            cells
                .iter()
                .zip(&cell_sigma)
                .map(|(cell, &sigma)| Ok(run(&data, &TrainConfig { seed, ..*cell }, sigma)?.eval_loss))
                .collect()
        })
        .collect::<Result<_>>()?;
    let table: Vec<SweepCell> = cells
        .iter()
        .zip(&cell_sigma)
        .enumerate()
        .map(|(c, (cell, &sigma))| {
            let xs: Vec<f64> = losses.iter().map(|row| row[c]).collect();
            let (mean_loss, stderr) = mean_stderr(&xs);
            SweepCell {
                variant: cell.variant,
                group_size: cell.group_size,
                batch: cell.batch,
                learning_rate: cell.learning_rate,
                clip_norm: cell.clip_norm,
                sigma,
                mean_loss,
                stderr,
                losses: xs,
            }
        })
        .collect();
    let best = table
        .iter()
        .min_by(|a, b| {
            // non-finite losses (divergent runs) never win
            let key = |c: &SweepCell| if c.mean_loss.is_finite() { c.mean_loss } else { f64::INFINITY };
            key(a).total_cmp(&key(b))
        })
        .expect("non-empty table")
        .clone();
    Ok(SweepResult { best, table })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> UserDataset {
        generate_synthetic(&SyntheticSpec {
            seed: 7,
            users: 8,
            examples_per_user: 4,
            dim: 3,
            sigma1: 1.0,
            sigma2: 0.5,
        })
        .unwrap()
    }

    #[test]
    fn clip_bounds_norm() {
        let v = clip(&[3.0, 4.0], 1.0);
        assert!((norm(&v) - 1.0).abs() < 1e-15);
        assert_eq!(clip(&[0.3, 0.4], 1.0), vec![0.3, 0.4]);
        assert_eq!(clip(&[0.0, 0.0], 1.0), vec![0.0, 0.0]);
    }

    #[test]
    fn degenerate_data_is_the_mean() {
        let data = generate_synthetic(&SyntheticSpec {
            sigma1: 0.0,
            sigma2: 0.0,
            users: 4,
            examples_per_user: 3,
            dim: 5,
            seed: 1,
        })
        .unwrap();
        for u in 0..4 {
            for j in 0..3 {
                assert_eq!(data.example(u, j), data.true_mean());
            }
        }
    }

    #[test]
    fn rejects_oversized_batches() {
        let data = tiny();
        let els = TrainConfig {
            variant: Variant::Els,
            steps: 1,
            learning_rate: 0.1,
            clip_norm: 1.0,
            group_size: 2,
            batch: 17,
            seed: 0,
        };
        assert!(dp_sgd_els(&data, &els, 0.0).is_err());
        let uls = TrainConfig {
            variant: Variant::Uls,
            batch: 9,
            ..els
        };
        assert!(dp_sgd_uls(&data, &uls, 0.0).is_err());
        assert!(dp_sgd_uls(&data, &els, 0.0).is_err());
    }

    #[test]
    fn mean_and_stderr() {
        let (m, s) = mean_stderr(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn stream_seeds_differ() {
        assert_ne!(trial_data_seed(1, 0), trial_data_seed(1, 1));
        assert_ne!(trial_data_seed(1, 0), trial_train_seed(1, 0));
        assert_eq!(trial_data_seed(9, 3), trial_data_seed(9, 3));
    }
}
