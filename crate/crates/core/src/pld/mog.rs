use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Component {
    pub c: f64,
    pub ln_w: f64,
    pub w: f64,
    /// `c / σ²`
    pub slope: f64,
    /// `c² / (2σ²)`
    pub offset: f64,
}

/// One-dimensional Mixture-of-Gaussians pair `P = N(X, σ²)` vs `Q = N(0, σ²)`,
/// where `X` takes value `sensitivities[i]` with probability `weights[i]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMechanism", into = "RawMechanism")]
pub struct MoGMechanism {
    sigma: f64,
    sensitivities: Vec<f64>,
    weights: Vec<f64>,
    components: Vec<Component>,
}

#[derive(Serialize, Deserialize)]
struct RawMechanism {
    sigma: f64,
    sensitivities: Vec<f64>,
    weights: Vec<f64>,
}

impl TryFrom<RawMechanism> for MoGMechanism {
    type Error = crate::Error;

    fn try_from(raw: RawMechanism) -> Result<Self> {
        MoGMechanism::new(raw.sigma, raw.sensitivities, raw.weights)
    }
}

impl From<MoGMechanism> for RawMechanism {
    fn from(m: MoGMechanism) -> Self {
        RawMechanism {
            sigma: m.sigma,
            sensitivities: m.sensitivities,
            weights: m.weights,
        }
    }
}

impl MoGMechanism {
    pub fn new(sigma: f64, sensitivities: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(invalid(format!("sigma must be positive and finite, got {sigma}")));
        }
        if sensitivities.is_empty() || sensitivities.len() != weights.len() {
            return Err(invalid(
                "sensitivities and weights must be non-empty and of equal length",
            ));
        }
        if sensitivities.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(invalid("sensitivities must be finite and non-negative"));
        }
        if sensitivities.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("sensitivities must be strictly increasing"));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(invalid("weights must be finite and non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("weights must sum to 1, got {total}")));
        }
        let var = sigma * sigma;
        let components = sensitivities
            .iter()
            .zip(&weights)
            .filter(|(_, w)| **w > 0.0)
            .map(|(&c, &w)| Component {
                c,
                ln_w: w.ln(),
                w,
                slope: c / var,
                offset: c * c / (2.0 * var),
            })
            .collect();
        Ok(Self {
            sigma,
            sensitivities,
            weights,
            components,
        })
    }

    /// Plain Gaussian mechanism with a single sensitivity.
    pub fn gaussian(sigma: f64, sensitivity: f64) -> Result<Self> {
        Self::new(sigma, vec![sensitivity], vec![1.0])
    }

    pub fn with_sigma(&self, sigma: f64) -> Result<Self> {
        Self::new(sigma, self.sensitivities.clone(), self.weights.clone())
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn sensitivities(&self) -> &[f64] {
        &self.sensitivities
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub(crate) fn components(&self) -> &[Component] {
        &self.components
    }

    /// True when `P` and `Q` coincide, i.e. every sensitivity with positive weight is zero.
    pub fn is_identity(&self) -> bool {
        self.components.iter().all(|c| c.c == 0.0)
    }

    /// Log-likelihood ratio `ln(P(x)/Q(x))`. Non-decreasing in `x`.
    pub fn privacy_loss(&self, x: f64) -> f64 {
        self.loss_and_slope(x).0
    }

    /// Privacy loss and its derivative in `x`.
    pub(crate) fn loss_and_slope(&self, x: f64) -> (f64, f64) {
        let mut max = f64::NEG_INFINITY;
        for comp in &self.components {
            max = max.max(comp.ln_w + comp.slope * x - comp.offset);
        }
        let mut sum = 0.0;
        let mut weighted = 0.0;
        for comp in &self.components {
            let e = (comp.ln_w + comp.slope * x - comp.offset - max).exp();
            sum += e;
            weighted += e * comp.slope;
        }
        (max + sum.ln(), weighted / sum)
    }
}
