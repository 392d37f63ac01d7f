//! Single-round PLD construction.
//!
//! Both directions are expressed as an increasing loss `L(y) = ln(μ(y)/ν(y))`
//! with `y ~ μ`:
//!
//! * add: `μ = P` (the mixture), `ν = Q`, `L = ℓ`;
//! * remove: `y = -x`, `μ = Q`, `ν = P` reflected, `L(y) = -ℓ(-y)`.
//!
//! Grid points `ε_i = iΔ` are pulled back to `y_i = L⁻¹(ε_i)` and each
//! interval `(y_i, y_{i+1}]` contributes its `μ`-mass to the grid.

use serde::{Deserialize, Serialize};

use super::mog::{Component, MoGMechanism};
use super::{AccountantConfig, PrivacyLossDistribution};
use crate::error::{invalid, Error, Result};
use crate::math::{norm_cdf, norm_quantile, norm_sf};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Loss `ln(P/Q)` under `x ~ P`.
    Add,
    /// Loss `ln(Q/P)` under `x ~ Q`.
    Remove,
}

/// How the mass of the interval between two grid points is placed on the grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Discretization {
    /// Split each interval's mass between its two end points so that both the
    /// `μ`- and `ν`-mass are preserved. δ is then exact at every grid point
    /// and an upper bound in between.
    ConnectDots,
    /// Move each interval's mass to its upper end point.
    RoundUp,
}

const ROOT_TOLERANCE: f64 = 1e-12;

struct LossPair<'a> {
    sigma: f64,
    components: &'a [Component],
    direction: Direction,
}

/// Values of the standard normal CDF or survival function, whichever is
/// the smaller tail, at the standardized end point of one component.
#[derive(Clone, Copy)]
struct TailValue {
    z: f64,
    tail: f64,
}

impl TailValue {
    fn at(z: f64) -> Self {
        let tail = if z <= 0.0 { norm_cdf(z) } else { norm_sf(z) };
        Self { z, tail }
    }

    /// `P(a < Z <= b)` given both end points.
    fn interval(a: Self, b: Self) -> f64 {
        if b.z <= a.z {
            0.0
        } else if a.z > 0.0 {
            (a.tail - b.tail).max(0.0)
        } else if b.z <= 0.0 {
            (b.tail - a.tail).max(0.0)
        } else {
            (1.0 - a.tail - b.tail).max(0.0)
        }
    }
}

impl LossPair<'_> {
    fn loss_and_slope(&self, y: f64) -> (f64, f64) {
        let (mut max, mut sum, mut weighted) = (f64::NEG_INFINITY, 0.0, 0.0);
        let x = match self.direction {
            Direction::Add => y,
            Direction::Remove => -y,
        };
        for c in self.components {
            max = max.max(c.ln_w + c.slope * x - c.offset);
        }
        for c in self.components {
            let e = (c.ln_w + c.slope * x - c.offset - max).exp();
            sum += e;
            weighted += e * c.slope;
        }
        let loss = max + sum.ln();
        match self.direction {
            Direction::Add => (loss, weighted / sum),
            Direction::Remove => (-loss, weighted / sum),
        }
    }

    fn loss(&self, y: f64) -> f64 {
        self.loss_and_slope(y).0
    }

    /// `(L(-∞), L(+∞))`.
    fn loss_limits(&self) -> (f64, f64) {
        let zero = self.components.iter().find(|c| c.c == 0.0).map(|c| c.ln_w);
        match (self.direction, zero) {
            (Direction::Add, Some(ln_w0)) => (ln_w0, f64::INFINITY),
            (Direction::Remove, Some(ln_w0)) => (f64::NEG_INFINITY, -ln_w0),
            _ => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    /// Means of the `μ` components with their weights.
    fn mu_components(&self) -> Vec<(f64, f64)> {
        match self.direction {
            Direction::Add => self.components.iter().map(|c| (c.c, c.w)).collect(),
            Direction::Remove => vec![(0.0, 1.0)],
        }
    }

    fn nu_components(&self) -> Vec<(f64, f64)> {
        match self.direction {
            Direction::Add => vec![(0.0, 1.0)],
            Direction::Remove => self.components.iter().map(|c| (-c.c, c.w)).collect(),
        }
    }
}

fn mixture_cdf(comps: &[(f64, f64)], sigma: f64, y: f64) -> f64 {
    comps.iter().map(|&(m, w)| w * norm_cdf((y - m) / sigma)).sum()
}

fn mixture_sf(comps: &[(f64, f64)], sigma: f64, y: f64) -> f64 {
    comps.iter().map(|&(m, w)| w * norm_sf((y - m) / sigma)).sum()
}

/// Root of an increasing function inside `[a, b]` with `f(a) <= target <= f(b)`.
/// Bisection, accelerated by Newton steps that stay strictly inside the bracket.
fn solve_increasing<F>(f: F, target: f64, mut a: f64, mut b: f64) -> f64
where
    F: Fn(f64) -> (f64, f64),
{
    let mut x = 0.5 * (a + b);
    for _ in 0..300 {
        let (fx, dfx) = f(x);
        let g = fx - target;
        if g == 0.0 {
            return x;
        }
        if g < 0.0 {
            a = x;
        } else {
            b = x;
        }
        if b - a <= ROOT_TOLERANCE {
            break;
        }
        let newton = x - g / dfx;
        if dfx > 0.0 && newton > a && newton < b {
            if (newton - x).abs() <= ROOT_TOLERANCE {
                return newton;
            }
            x = newton;
        } else {
            x = 0.5 * (a + b);
        }
    }
    0.5 * (a + b)
}

/// Largest `y` (up to bisection tolerance) with `cdf(y) <= tail`, and the
/// mirror-image upper cut.
fn tail_cuts(pair: &LossPair<'_>, tail: f64) -> (f64, f64) {
    let comps = pair.mu_components();
    let sigma = pair.sigma;
    let lo_mean = comps.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
    let hi_mean = comps.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max);
    let z = norm_quantile(tail).min(-1.0);

    let mut lo = lo_mean + sigma * z;
    while mixture_cdf(&comps, sigma, lo) > tail {
        lo -= sigma;
    }
    let mut hi = hi_mean;
    for _ in 0..200 {
        if hi - lo <= 1e-9 * sigma {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mixture_cdf(&comps, sigma, mid) <= tail {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let y_lo = lo;

    let mut hi = hi_mean - sigma * z;
    while mixture_sf(&comps, sigma, hi) > tail {
        hi += sigma;
    }
    let mut lo = lo_mean;
    for _ in 0..200 {
        if hi - lo <= 1e-9 * sigma {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mixture_sf(&comps, sigma, mid) <= tail {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    (y_lo, hi)
}

/// Pull the loss grid back to the sampling axis.
fn grid_points(pair: &LossPair<'_>, first: i64, count: usize, spacing: f64, hint: (f64, f64)) -> Vec<f64> {
    let (lim_lo, lim_hi) = pair.loss_limits();
    let step0 = pair.sigma.max(1e-3);
    let mut ys = Vec::with_capacity(count);
    let mut prev: Option<f64> = None;
    let mut gap = (hint.1 - hint.0) / count.max(1) as f64;
    for k in 0..count {
        let eps = (first + k as i64) as f64 * spacing;
        if eps <= lim_lo {
            ys.push(f64::NEG_INFINITY);
            continue;
        }
        if eps >= lim_hi {
            ys.push(f64::INFINITY);
            continue;
        }
        let mut a = prev.unwrap_or(hint.0);
        let mut step = step0;
        while pair.loss(a) > eps {
            a -= step;
            step *= 2.0;
        }
        let mut b = a + 2.0 * gap.max(ROOT_TOLERANCE);
        let mut step = gap.max(step0 * 1e-6);
        while pair.loss(b) < eps {
            a = b;
            b += step;
            step *= 2.0;
        }
        let y = solve_increasing(|y| pair.loss_and_slope(y), eps, a, b);
        if let Some(p) = prev {
            gap = (y - p).max(ROOT_TOLERANCE);
        }
        prev = Some(y);
        ys.push(y);
    }
    ys
}

/// Running per-component tail values at one grid point.
fn tails_at(comps: &[(f64, f64)], sigma: f64, y: f64) -> Vec<TailValue> {
    comps.iter().map(|&(m, _)| TailValue::at((y - m) / sigma)).collect()
}

fn interval_mass(comps: &[(f64, f64)], a: &[TailValue], b: &[TailValue]) -> f64 {
    comps
        .iter()
        .zip(a.iter().zip(b))
        .map(|(&(_, w), (&ta, &tb))| w * TailValue::interval(ta, tb))
        .sum()
}

/// Single-round privacy loss distribution of `mech` in `direction`.
pub fn build_pld(
    mech: &MoGMechanism,
    direction: Direction,
    cfg: &AccountantConfig,
) -> Result<PrivacyLossDistribution> {
    let spacing = cfg.grid_spacing;
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(invalid(format!("grid spacing must be positive, got {spacing}")));
    }
    if !(cfg.tail_mass > 0.0 && cfg.tail_mass < 1e-6) {
        return Err(invalid(format!("tail mass must lie in (0, 1e-6), got {}", cfg.tail_mass)));
    }
    if mech.is_identity() {
        return Ok(PrivacyLossDistribution::identity(spacing));
    }

    let pair = LossPair {
        sigma: mech.sigma(),
        components: mech.components(),
        direction,
    };
    let (y_lo, y_hi) = tail_cuts(&pair, cfg.tail_mass);
    let loss_lo = pair.loss(y_lo);
    let loss_hi = pair.loss(y_hi);
    let first = (loss_lo / spacing).floor();
    let last = (loss_hi / spacing).ceil();
    let span = last - first + 1.0;
    if !span.is_finite() || span > cfg.bucket_cap as f64 {
        return Err(Error::CapacityExceeded {
            buckets: if span.is_finite() { span as usize } else { usize::MAX },
            cap: cfg.bucket_cap,
        });
    }
    let first = first as i64;
    let count = span as usize;

    let ys = grid_points(&pair, first, count, spacing, (y_lo, y_hi));
    let mu = pair.mu_components();
    let nu = pair.nu_components();
    let sigma = pair.sigma;

    let mut masses = vec![0.0; count];
    let mut mu_prev = tails_at(&mu, sigma, ys[0]);
    let mut nu_prev = tails_at(&nu, sigma, ys[0]);
    masses[0] += mixture_cdf(&mu, sigma, ys[0]);
    let ln_growth = spacing.exp_m1();
    for k in 0..count - 1 {
        let mu_next = tails_at(&mu, sigma, ys[k + 1]);
        let nu_next = tails_at(&nu, sigma, ys[k + 1]);
        let p = interval_mass(&mu, &mu_prev, &mu_next);
        if p > 0.0 {
            match cfg.discretization {
                Discretization::RoundUp => masses[k + 1] += p,
                Discretization::ConnectDots => {
                    let q = interval_mass(&nu, &nu_prev, &nu_next);
                    if q > 0.0 {
                        let eps = (first + k as i64) as f64 * spacing;
                        // ln(p / q) - ε_k lies in [0, Δ] up to rounding
                        let excess = p.ln() - q.ln() - eps;
                        let theta = (excess.exp_m1() / ln_growth).clamp(0.0, 1.0);
                        let lower = ((1.0 - theta) * p * (-excess).exp()).min(p);
                        masses[k] += lower;
                        masses[k + 1] += p - lower;
                    } else {
                        masses[k + 1] += p;
                    }
                }
            }
        }
        mu_prev = mu_next;
        nu_prev = nu_next;
    }
    let infinity_mass = mixture_sf(&mu, sigma, ys[count - 1]);
    Ok(PrivacyLossDistribution::from_parts(
        spacing,
        first,
        masses,
        infinity_mass,
        true,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(spacing: f64) -> AccountantConfig {
        AccountantConfig::default().with_grid_spacing(spacing)
    }

    #[test]
    fn identical_distributions_give_point_mass_at_zero() {
        let mech = MoGMechanism::new(1.0, vec![0.0], vec![1.0]).unwrap();
        for dir in [Direction::Add, Direction::Remove] {
            let pld = build_pld(&mech, dir, &cfg(1e-3)).unwrap();
            assert_eq!(pld.masses(), &[1.0]);
            assert_eq!(pld.loss(0), 0.0);
            assert!(pld.infinity_mass() < 1e-15);
        }
    }

    #[test]
    fn zero_probability_sampling_is_identity() {
        let mech = MoGMechanism::new(1.0, vec![0.0, 1.0], vec![1.0, 0.0]).unwrap();
        let pld = build_pld(&mech, Direction::Add, &cfg(1e-3)).unwrap();
        assert_eq!(pld.delta_at_epsilon(0.0), 0.0);
    }

    #[test]
    fn gaussian_loss_mean() {
        // loss = (2x - 1)/2 with x ~ N(1, 1): mean 1/2
        let mech = MoGMechanism::gaussian(1.0, 1.0).unwrap();
        for disc in [Discretization::ConnectDots, Discretization::RoundUp] {
            let mut c = cfg(1e-3);
            c.discretization = disc;
            for dir in [Direction::Add, Direction::Remove] {
                let pld = build_pld(&mech, dir, &c).unwrap();
                assert!((pld.total_mass() - 1.0).abs() < 1e-12);
                assert!((pld.finite_mean() - 0.5).abs() < 1e-3, "{disc:?} {dir:?}");
            }
        }
    }

    #[test]
    fn rejects_bad_configuration() {
        let mech = MoGMechanism::gaussian(1.0, 1.0).unwrap();
        assert!(build_pld(&mech, Direction::Add, &cfg(0.0)).is_err());
        assert!(build_pld(&mech, Direction::Add, &cfg(-1e-3)).is_err());
        let mut c = cfg(1e-3);
        c.tail_mass = 1e-3;
        assert!(build_pld(&mech, Direction::Add, &c).is_err());
    }

    #[test]
    fn bucket_cap_is_enforced() {
        let mech = MoGMechanism::gaussian(0.01, 1.0).unwrap();
        let mut c = cfg(1e-3);
        c.bucket_cap = 1 << 16;
        assert!(matches!(
            build_pld(&mech, Direction::Add, &c),
            Err(Error::CapacityExceeded { .. })
        ));
    }

    #[test]
    fn root_finder_hits_tolerance() {
        let f = |x: f64| (x * x * x + x, 3.0 * x * x + 1.0);
        let root = solve_increasing(f, 2.0, -10.0, 10.0);
        assert!((root - 1.0).abs() < 1e-11);
    }

    #[test]
    fn grid_points_invert_the_loss() {
        let mech = MoGMechanism::new(2.0, vec![0.0, 1.0, 2.0], vec![0.81, 0.18, 0.01]).unwrap();
        let pair = LossPair {
            sigma: 2.0,
            components: mech.components(),
            direction: Direction::Add,
        };
        let ys = grid_points(&pair, -200, 600, 1e-3, (-10.0, 10.0));
        for (k, y) in ys.iter().enumerate() {
            let eps = (-200 + k as i64) as f64 * 1e-3;
            if y.is_finite() {
                assert!((pair.loss(*y) - eps).abs() < 1e-10, "k={k}");
            } else {
                assert!(eps <= 0.81f64.ln());
            }
        }
    }
}
