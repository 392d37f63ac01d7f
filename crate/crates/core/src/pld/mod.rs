//! Privacy loss distributions for Mixture-of-Gaussians mechanisms.
//!
//! A [`PrivacyLossDistribution`] holds the law of the privacy loss random
//! variable on a uniform grid `(origin_index + i) * grid_spacing`, plus an
//! explicit atom at `+inf`. Distributions built here are pessimistic: the
//! hockey-stick divergence read off them upper-bounds that of the underlying
//! mechanism, and self-composition preserves the bound.

mod build;
mod compose;
mod mog;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub use build::{build_pld, Direction, Discretization};
pub use compose::ComposeMethod;
pub use mog::MoGMechanism;

/// An `(ε, δ)` pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    pub epsilon: f64,
    pub delta: f64,
}

impl PrivacyParams {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon >= 0.0) || epsilon.is_nan() {
            return Err(invalid(format!("epsilon must be >= 0, got {epsilon}")));
        }
        if !(0.0..=1.0).contains(&delta) {
            return Err(invalid(format!("delta must lie in [0, 1], got {delta}")));
        }
        Ok(Self { epsilon, delta })
    }
}

/// Knobs shared by PLD construction, composition and everything built on top.
#[derive(Clone, Debug, PartialEq)]
pub struct AccountantConfig {
    pub grid_spacing: f64,
    /// Per-side probability mass of the sampling distribution left outside the
    /// discretized range.
    pub tail_mass: f64,
    pub discretization: Discretization,
    pub bucket_cap: usize,
    /// Per-side mass that composition may move off the ends of the support.
    pub truncation: f64,
    pub compose_method: ComposeMethod,
}

impl Default for AccountantConfig {
    fn default() -> Self {
        Self {
            grid_spacing: 1e-3,
            tail_mass: 1e-15,
            discretization: Discretization::ConnectDots,
            bucket_cap: 1 << 22,
            truncation: 1e-30,
            compose_method: ComposeMethod::Auto,
        }
    }
}

impl AccountantConfig {
    /// Finer grid used when cross-checking against independent oracles.
    pub fn fine() -> Self {
        Self {
            grid_spacing: 1e-4,
            ..Self::default()
        }
    }

    pub fn with_grid_spacing(mut self, grid_spacing: f64) -> Self {
        self.grid_spacing = grid_spacing;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPld", into = "RawPld")]
pub struct PrivacyLossDistribution {
    grid_spacing: f64,
    origin_index: i64,
    masses: Vec<f64>,
    infinity_mass: f64,
    pessimistic: bool,
}

#[derive(Serialize, Deserialize)]
struct RawPld {
    grid_spacing: f64,
    origin_index: i64,
    masses: Vec<f64>,
    infinity_mass: f64,
    pessimistic: bool,
}

impl TryFrom<RawPld> for PrivacyLossDistribution {
    type Error = Error;

    fn try_from(r: RawPld) -> Result<Self> {
        Self::new(r.grid_spacing, r.origin_index, r.masses, r.infinity_mass, r.pessimistic)
    }
}

impl From<PrivacyLossDistribution> for RawPld {
    fn from(p: PrivacyLossDistribution) -> Self {
        RawPld {
            grid_spacing: p.grid_spacing,
            origin_index: p.origin_index,
            masses: p.masses,
            infinity_mass: p.infinity_mass,
            pessimistic: p.pessimistic,
        }
    }
}

const MASS_TOLERANCE: f64 = 1e-9;

impl PrivacyLossDistribution {
    pub fn new(
        grid_spacing: f64,
        origin_index: i64,
        masses: Vec<f64>,
        infinity_mass: f64,
        pessimistic: bool,
    ) -> Result<Self> {
        if !(grid_spacing > 0.0 && grid_spacing.is_finite()) {
            return Err(invalid(format!("grid spacing must be positive, got {grid_spacing}")));
        }
        if masses.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(invalid("masses must be finite and non-negative"));
        }
        if !(0.0..=1.0).contains(&infinity_mass) {
            return Err(invalid(format!("infinity mass must lie in [0, 1], got {infinity_mass}")));
        }
        let total = infinity_mass + masses.iter().sum::<f64>();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(invalid(format!("total mass must be 1, got {total}")));
        }
        Ok(Self {
            grid_spacing,
            origin_index,
            masses,
            infinity_mass,
            pessimistic,
        })
    }

    /// Distribution of a mechanism whose output distributions coincide.
    pub fn identity(grid_spacing: f64) -> Self {
        Self {
            grid_spacing,
            origin_index: 0,
            masses: vec![1.0],
            infinity_mass: 0.0,
            pessimistic: true,
        }
    }

    /// Skips the mass check; callers guarantee the invariants up to rounding.
    pub(crate) fn from_parts(
        grid_spacing: f64,
        origin_index: i64,
        mut masses: Vec<f64>,
        infinity_mass: f64,
        pessimistic: bool,
    ) -> Self {
        let first = masses.iter().position(|&m| m > 0.0);
        let (origin_index, masses) = match first {
            None => (0, Vec::new()),
            Some(first) => {
                let last = masses.iter().rposition(|&m| m > 0.0).unwrap_or(first);
                masses.truncate(last + 1);
                masses.drain(..first);
                (origin_index + first as i64, masses)
            }
        };
        Self {
            grid_spacing,
            origin_index,
            masses,
            infinity_mass: infinity_mass.clamp(0.0, 1.0),
            pessimistic,
        }
    }

    pub fn grid_spacing(&self) -> f64 {
        self.grid_spacing
    }

    pub fn origin_index(&self) -> i64 {
        self.origin_index
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn infinity_mass(&self) -> f64 {
        self.infinity_mass
    }

    pub fn pessimistic(&self) -> bool {
        self.pessimistic
    }

    /// Loss value of bucket `i`.
    pub fn loss(&self, i: usize) -> f64 {
        (self.origin_index + i as i64) as f64 * self.grid_spacing
    }

    pub fn total_mass(&self) -> f64 {
        self.infinity_mass + self.masses.iter().sum::<f64>()
    }

    /// Expected loss over the finite part, normalized by its mass.
    pub fn finite_mean(&self) -> f64 {
        let finite: f64 = self.masses.iter().sum();
        let weighted: f64 = self
            .masses
            .iter()
            .enumerate()
            .map(|(i, m)| m * self.loss(i))
            .sum();
        weighted / finite
    }

    /// Hockey-stick divergence at `e^ε`: `m∞ + Σ_j m_j (1 - e^{ε - ℓ_j})₊`.
    pub fn delta_at_epsilon(&self, epsilon: f64) -> f64 {
        // one bucket of slack below the first candidate absorbs rounding in ε / Δ
        let first = (epsilon / self.grid_spacing).floor() as i64 - self.origin_index - 1;
        let first = first.clamp(0, self.masses.len() as i64) as usize;
        let mut delta = 0.0;
        for (i, &m) in self.masses.iter().enumerate().skip(first) {
            let loss = self.loss(i);
            if loss > epsilon {
                delta += m * -(epsilon - loss).exp_m1();
            }
        }
        (delta + self.infinity_mass).clamp(0.0, 1.0)
    }

    /// Smallest `ε >= 0` with `delta_at_epsilon(ε) <= delta`, to within 1e-9.
    pub fn epsilon_at_delta(&self, delta: f64) -> Result<f64> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(invalid(format!("delta must lie in (0, 1), got {delta}")));
        }
        if delta <= self.infinity_mass {
            return Err(Error::Unsatisfiable(format!(
                "delta {delta} is not above the infinity mass {}",
                self.infinity_mass
            )));
        }
        if self.delta_at_epsilon(0.0) <= delta {
            return Ok(0.0);
        }
        let mut lo = 0.0;
        let mut hi = 1.0;
        while self.delta_at_epsilon(hi) > delta {
            lo = hi;
            hi *= 2.0;
            if hi > 1e6 {
                return Err(Error::Unsatisfiable(format!(
                    "no epsilon below {hi} reaches delta {delta}"
                )));
            }
        }
        while hi - lo > 1e-9 {
            let mid = 0.5 * (lo + hi);
            if self.delta_at_epsilon(mid) > delta {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(hi)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("PLD serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| invalid(format!("bad PLD document: {e}")))
    }
}

/// Add- and remove-direction PLDs of the same (possibly composed) mechanism.
#[derive(Clone, Debug)]
pub struct PldPair {
    pub add: PrivacyLossDistribution,
    pub remove: PrivacyLossDistribution,
}

impl PldPair {
    /// Symmetrized hockey-stick divergence.
    pub fn delta_at_epsilon(&self, epsilon: f64) -> f64 {
        self.add
            .delta_at_epsilon(epsilon)
            .max(self.remove.delta_at_epsilon(epsilon))
    }

    pub fn epsilon_at_delta(&self, delta: f64) -> Result<f64> {
        Ok(self
            .add
            .epsilon_at_delta(delta)?
            .max(self.remove.epsilon_at_delta(delta)?))
    }
}

fn composed(
    mech: &MoGMechanism,
    direction: Direction,
    steps: u64,
    cfg: &AccountantConfig,
) -> Result<PrivacyLossDistribution> {
    build_pld(mech, direction, cfg)?.compose(steps, cfg)
}

/// Both directions of `mech` composed with itself `steps` times.
pub fn composed_pair(mech: &MoGMechanism, steps: u64, cfg: &AccountantConfig) -> Result<PldPair> {
    Ok(PldPair {
        add: composed(mech, Direction::Add, steps, cfg)?,
        remove: composed(mech, Direction::Remove, steps, cfg)?,
    })
}

/// `max` over both directions of δ(ε) for the `steps`-fold composition.
pub fn symmetric_delta(
    mech: &MoGMechanism,
    steps: u64,
    epsilon: f64,
    cfg: &AccountantConfig,
) -> Result<f64> {
    let add = composed(mech, Direction::Add, steps, cfg)?.delta_at_epsilon(epsilon);
    let remove = composed(mech, Direction::Remove, steps, cfg)?.delta_at_epsilon(epsilon);
    Ok(add.max(remove))
}

/// Whether the symmetrized δ at `epsilon` stays at or below `delta`.
/// Stops after the first direction that already exceeds it.
pub(crate) fn meets_target(
    mech: &MoGMechanism,
    steps: u64,
    target: PrivacyParams,
    cfg: &AccountantConfig,
) -> Result<bool> {
    for direction in [Direction::Remove, Direction::Add] {
        let d = composed(mech, direction, steps, cfg)?.delta_at_epsilon(target.epsilon);
        if d > target.delta {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Smallest ε meeting `delta` in both directions.
pub fn symmetric_epsilon(
    mech: &MoGMechanism,
    steps: u64,
    delta: f64,
    cfg: &AccountantConfig,
) -> Result<f64> {
    composed_pair(mech, steps, cfg)?.epsilon_at_delta(delta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_bucket() -> PrivacyLossDistribution {
        PrivacyLossDistribution::new(0.5, 1, vec![0.5, 0.5], 0.0, true).unwrap()
    }

    #[test]
    fn delta_of_identity_is_zero() {
        let pld = PrivacyLossDistribution::identity(1e-3);
        assert_eq!(pld.delta_at_epsilon(0.0), 0.0);
        assert_eq!(pld.epsilon_at_delta(1e-6).unwrap(), 0.0);
    }

    #[test]
    fn delta_hand_computed() {
        // losses 0.5 and 1.0
        let pld = two_bucket();
        let expected = 0.5 * (1.0 - (-0.5f64).exp()) + 0.5 * (1.0 - (-1.0f64).exp());
        assert!((pld.delta_at_epsilon(0.0) - expected).abs() < 1e-15);
        let expected = 0.5 * (1.0 - (-0.25f64).exp());
        assert!((pld.delta_at_epsilon(0.75) - expected).abs() < 1e-15);
        assert_eq!(pld.delta_at_epsilon(1.0), 0.0);
    }

    #[test]
    fn delta_tends_to_infinity_mass() {
        let pld = PrivacyLossDistribution::new(0.1, -3, vec![0.2, 0.3, 0.4], 0.1, true).unwrap();
        assert!((pld.delta_at_epsilon(1e9) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn epsilon_errors() {
        let pld = PrivacyLossDistribution::new(0.1, 0, vec![0.5, 0.4], 0.1, true).unwrap();
        assert!(matches!(pld.epsilon_at_delta(0.05), Err(Error::Unsatisfiable(_))));
        assert!(matches!(pld.epsilon_at_delta(0.0), Err(Error::InvalidParameter(_))));
        let eps = pld.epsilon_at_delta(0.11).unwrap();
        assert!(pld.delta_at_epsilon(eps) <= 0.11);
        assert!(pld.delta_at_epsilon(eps - 1e-6) > 0.11);
    }

    #[test]
    fn rejects_bad_mass() {
        assert!(PrivacyLossDistribution::new(0.1, 0, vec![0.5], 0.1, true).is_err());
        assert!(PrivacyLossDistribution::new(0.0, 0, vec![1.0], 0.0, true).is_err());
        assert!(PrivacyLossDistribution::new(0.1, 0, vec![1.1, -0.1], 0.0, true).is_err());
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let pld = PrivacyLossDistribution::new(
            1e-3,
            -17,
            vec![0.1 + 0.2, 1.0 / 3.0, 1.0 - 0.3 - 1.0 / 3.0 - 1e-17],
            1e-17,
            true,
        )
        .unwrap();
        let back = PrivacyLossDistribution::from_json(&pld.to_json()).unwrap();
        assert_eq!(pld, back);
        for (a, b) in pld.masses().iter().zip(back.masses()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let doc: serde_json::Value = serde_json::from_str(&pld.to_json()).unwrap();
        for key in ["grid_spacing", "origin_index", "masses", "infinity_mass", "pessimistic"] {
            assert!(doc.get(key).is_some(), "missing {key}");
        }
    }
}
