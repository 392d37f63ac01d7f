//! The DP-SGD sampling events: example-level (binomial mixture) and
//! user-level (Bernoulli mixture), plus noise calibration and the black-box
//! group-privacy baseline.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::math::binomial_pmf;
use crate::pld::{self, AccountantConfig, MoGMechanism, PrivacyParams};

/// Example-level sampling: each example of `D_sub` joins a batch with
/// probability `p`, and a user owns at most `group_size` of them.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElsEventSpec {
    pub sigma: f64,
    pub p: f64,
    #[serde(rename = "K")]
    pub group_size: u32,
    #[serde(rename = "T")]
    pub steps: u64,
}

/// User-level sampling with probability `q = M / N`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UlsEventSpec {
    pub sigma: f64,
    pub q: f64,
    #[serde(rename = "T")]
    pub steps: u64,
}

/// Tagged form used on the command line: `{"kind": "els", ...}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EventSpec {
    Els(ElsEventSpec),
    Uls(UlsEventSpec),
}

fn check_prob(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(invalid(format!("{name} must lie in [0, 1], got {v}")));
    }
    Ok(())
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(invalid(format!("sigma must be positive and finite, got {sigma}")));
    }
    Ok(())
}

fn check_steps(steps: u64) -> Result<()> {
    if steps == 0 {
        return Err(invalid("steps must be at least 1"));
    }
    Ok(())
}

impl ElsEventSpec {
    pub fn validate(&self) -> Result<()> {
        check_sigma(self.sigma)?;
        check_prob("p", self.p)?;
        check_steps(self.steps)?;
        if self.group_size == 0 {
            return Err(invalid("group size must be at least 1"));
        }
        Ok(())
    }
}

impl UlsEventSpec {
    pub fn validate(&self) -> Result<()> {
        check_sigma(self.sigma)?;
        check_prob("q", self.q)?;
        check_steps(self.steps)
    }
}

impl EventSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            EventSpec::Els(s) => s.validate(),
            EventSpec::Uls(s) => s.validate(),
        }
    }

    pub fn steps(&self) -> u64 {
        match self {
            EventSpec::Els(s) => s.steps,
            EventSpec::Uls(s) => s.steps,
        }
    }

    pub fn mechanism(&self) -> Result<MoGMechanism> {
        match self {
            EventSpec::Els(s) => els_mechanism(s),
            EventSpec::Uls(s) => uls_mechanism(s),
        }
    }

    pub fn family(&self) -> EventFamily {
        match *self {
            EventSpec::Els(s) => EventFamily::Els {
                p: s.p,
                group_size: s.group_size,
                steps: s.steps,
            },
            EventSpec::Uls(s) => EventFamily::Uls { q: s.q, steps: s.steps },
        }
    }
}

fn sensitivity_mixture(sigma: f64, weights: Vec<f64>) -> Result<MoGMechanism> {
    let total: f64 = weights.iter().sum();
    let weights = weights.into_iter().map(|w| w / total).collect::<Vec<_>>();
    let sensitivities = (0..weights.len()).map(|i| i as f64).collect();
    MoGMechanism::new(sigma, sensitivities, weights)
}

/// `N(Bin(K, p), σ²)` against `N(0, σ²)`.
pub fn els_mechanism(spec: &ElsEventSpec) -> Result<MoGMechanism> {
    spec.validate()?;
    sensitivity_mixture(spec.sigma, binomial_pmf(spec.group_size, spec.p))
}

/// `N(Bern(q), σ²)` against `N(0, σ²)`.
pub fn uls_mechanism(spec: &UlsEventSpec) -> Result<MoGMechanism> {
    spec.validate()?;
    sensitivity_mixture(spec.sigma, vec![1.0 - spec.q, spec.q])
}

/// An event with the noise multiplier left free.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EventFamily {
    Els {
        p: f64,
        #[serde(rename = "K")]
        group_size: u32,
        #[serde(rename = "T")]
        steps: u64,
    },
    Uls {
        q: f64,
        #[serde(rename = "T")]
        steps: u64,
    },
}

impl EventFamily {
    pub fn with_sigma(&self, sigma: f64) -> EventSpec {
        match *self {
            EventFamily::Els { p, group_size, steps } => EventSpec::Els(ElsEventSpec {
                sigma,
                p,
                group_size,
                steps,
            }),
            EventFamily::Uls { q, steps } => EventSpec::Uls(UlsEventSpec { sigma, q, steps }),
        }
    }
}

/// Symmetrized δ at `epsilon` for an event.
pub fn event_delta(spec: &EventSpec, epsilon: f64, cfg: &AccountantConfig) -> Result<f64> {
    pld::symmetric_delta(&spec.mechanism()?, spec.steps(), epsilon, cfg)
}

/// Smallest ε with symmetrized δ(ε) at most `delta`.
pub fn event_epsilon(spec: &EventSpec, delta: f64, cfg: &AccountantConfig) -> Result<f64> {
    pld::symmetric_epsilon(&spec.mechanism()?, spec.steps(), delta, cfg)
}

/// Relative tolerance on calibrated noise multipliers.
pub const CALIBRATION_TOLERANCE: f64 = 1e-3;
const SIGMA_LO: f64 = 1e-3;
const SIGMA_HI: f64 = 1e3;
const SIGMA_MAX: f64 = 1e6;

/// Whether noise `sigma` meets `target`. A grid that cannot hold the loss
/// range counts as failure: that only happens for tiny `sigma`.
fn sigma_meets(
    family: &EventFamily,
    sigma: f64,
    target: PrivacyParams,
    cfg: &AccountantConfig,
) -> Result<bool> {
    let spec = family.with_sigma(sigma);
    match pld::meets_target(&spec.mechanism()?, spec.steps(), target, cfg) {
        Ok(ok) => Ok(ok),
        Err(Error::CapacityExceeded { .. }) => Ok(false),
        Err(e) => Err(e),
    }
}

/// Smallest noise multiplier (to relative tolerance [`CALIBRATION_TOLERANCE`])
/// whose event meets `target`. The returned value always meets it.
pub fn calibrate_sigma(
    family: &EventFamily,
    target: PrivacyParams,
    cfg: &AccountantConfig,
) -> Result<f64> {
    if !(target.delta > 0.0 && target.delta < 1.0) {
        return Err(invalid(format!("target delta must lie in (0, 1), got {}", target.delta)));
    }
    family.with_sigma(1.0).validate()?;
    let mut lo = SIGMA_LO;
    let mut hi = SIGMA_HI;
    while !sigma_meets(family, hi, target, cfg)? {
        lo = hi;
        hi *= 10.0;
        if hi > SIGMA_MAX {
            return Err(Error::BracketExhausted {
                max_sigma: SIGMA_MAX,
                epsilon: target.epsilon,
                delta: target.delta,
            });
        }
    }
    if sigma_meets(family, lo, target, cfg)? {
        return Ok(lo);
    }
    while hi / lo > 1.0 + CALIBRATION_TOLERANCE {
        let mid = (lo * hi).sqrt();
        if sigma_meets(family, mid, target, cfg)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// How example-level `(ε, δ)` is promoted to a group of size `G`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroupPrivacyRule {
    /// `(Gε, δ (e^{Gε} - 1) / (e^ε - 1))`.
    #[default]
    GeometricSum,
    /// `(Gε, G e^{(G-1)ε} δ)`, a looser closed form.
    Exponential,
}

/// Group-promoted privacy parameters. `diverged` is set when δ exceeds 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupPrivacy {
    pub epsilon: f64,
    pub delta: f64,
    pub diverged: bool,
}

/// Black-box group privacy for `group_size` examples per user.
pub fn blackbox_group_epsilon(
    example_eps: f64,
    example_delta: f64,
    group_size: u32,
    rule: GroupPrivacyRule,
) -> Result<GroupPrivacy> {
    if !(example_eps > 0.0) {
        return Err(invalid("example-level epsilon must be positive"));
    }
    if group_size == 0 {
        return Err(invalid("group size must be at least 1"));
    }
    let g = group_size as f64;
    let delta = match rule {
        GroupPrivacyRule::GeometricSum => {
            example_delta * ((g * example_eps).exp_m1() / example_eps.exp_m1())
        }
        GroupPrivacyRule::Exponential => g * ((g - 1.0) * example_eps).exp() * example_delta,
    };
    Ok(GroupPrivacy {
        epsilon: g * example_eps,
        delta,
        diverged: !(delta <= 1.0),
    })
}

/// One point of the tight-versus-black-box comparison.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupComparison {
    pub group_size: u32,
    /// ε of the binomial-mixture event with `K = group_size`.
    pub mog_epsilon: f64,
    /// Example-level ε at the target δ, promoted to the group.
    pub blackbox: GroupPrivacy,
    /// Best promoted ε over example-level δ choices that keep the promoted
    /// δ at the target; `None` when no choice does.
    pub blackbox_tuned_epsilon: Option<f64>,
}

/// Compare accounting of `N(Bin(G, p), σ²)^T` with black-box promotion of the
/// `G = 1` event, at target δ `delta`.
pub fn compare_group_accounting(
    sigma: f64,
    p: f64,
    steps: u64,
    delta: f64,
    group_sizes: &[u32],
    rule: GroupPrivacyRule,
    cfg: &AccountantConfig,
) -> Result<Vec<GroupComparison>> {
    let single = ElsEventSpec {
        sigma,
        p,
        group_size: 1,
        steps,
    };
    let example = pld::composed_pair(&els_mechanism(&single)?, steps, cfg)?;
    let example_eps = example.epsilon_at_delta(delta)?;
    group_sizes
        .iter()
        .map(|&g| {
            let spec = ElsEventSpec {
                group_size: g,
                ..single
            };
            let mog_epsilon = event_epsilon(&EventSpec::Els(spec), delta, cfg)?;
            let blackbox = blackbox_group_epsilon(example_eps.max(f64::MIN_POSITIVE), delta, g, rule)?;
            let tuned = tuned_blackbox(&example, delta, g, rule)?;
            Ok(GroupComparison {
                group_size: g,
                mog_epsilon,
                blackbox,
                blackbox_tuned_epsilon: tuned,
            })
        })
        .collect()
}

/// Scan example-level δ on a log grid below `delta` for the smallest
/// promoted ε whose promoted δ stays within `delta`.
fn tuned_blackbox(
    example: &pld::PldPair,
    delta: f64,
    group_size: u32,
    rule: GroupPrivacyRule,
) -> Result<Option<f64>> {
    let floor = example.add.infinity_mass().max(example.remove.infinity_mass());
    let mut best: Option<f64> = None;
    let steps_per_decade = 8;
    for i in 0..=(16 * steps_per_decade) {
        let d = delta * 10f64.powf(-(i as f64) / steps_per_decade as f64);
        if d <= floor {
            break;
        }
        let eps = match example.epsilon_at_delta(d) {
            Ok(e) => e.max(f64::MIN_POSITIVE),
            Err(Error::Unsatisfiable(_)) => break,
            Err(e) => return Err(e),
        };
        let promoted = blackbox_group_epsilon(eps, d, group_size, rule)?;
        if promoted.delta <= delta && best.is_none_or(|b| promoted.epsilon < b) {
            best = Some(promoted.epsilon);
        }
    }
    Ok(best)
}

/// One cell of the `σ_ELS ≤ K σ_ULS` probe.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConjectureProbe {
    #[serde(rename = "K")]
    pub group_size: u32,
    pub p: f64,
    #[serde(rename = "T")]
    pub steps: u64,
    pub epsilon: f64,
    pub delta: f64,
    pub sigma_els: f64,
    pub sigma_uls: f64,
    /// `σ_ELS / (K σ_ULS)`; above 1 is a violation.
    pub ratio: f64,
    pub violated: bool,
}

/// Calibrate ELS with group size `K` and ULS with `q = p` at the same target.
pub fn conjecture_probe(
    group_size: u32,
    p: f64,
    steps: u64,
    target: PrivacyParams,
    cfg: &AccountantConfig,
) -> Result<ConjectureProbe> {
    let sigma_els = calibrate_sigma(&EventFamily::Els { p, group_size, steps }, target, cfg)?;
    let sigma_uls = calibrate_sigma(&EventFamily::Uls { q: p, steps }, target, cfg)?;
    let ratio = sigma_els / (group_size as f64 * sigma_uls);
    Ok(ConjectureProbe {
        group_size,
        p,
        steps,
        epsilon: target.epsilon,
        delta: target.delta,
        sigma_els,
        sigma_uls,
        ratio,
        // both sides carry the calibration tolerance
        violated: ratio > 1.0 + 2.0 * CALIBRATION_TOLERANCE,
    })
}
