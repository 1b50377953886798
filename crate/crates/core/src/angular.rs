//! Bernstein-polynomial angular densities on the two-dimensional simplex.
//!
//! An angular density of order `J` is the mixture
//! `h(w) = Σ_α π_α · Beta(w; α₁, α₂)` over multi-indices `α = (α₁, α₂)` with
//! `α₁ + α₂ = J` and `α_i >= 1`. The weights sum to one and satisfy the mean
//! constraint `Σ_α α₁ π_α = J/2`, which makes `∫ w h(w) dw = 1/2`.
//!
//! Weights are parametrized by logits on the free indices
//! `F = {α : 2 <= α₁ <= J-2}`:
//! `π_α = exp(π'_α) / (2 + Σ_F exp(π'))`; the two extremal weights
//! `π_(1,J-1)` and `π_(J-1,1)` are pinned by the constraints.

use serde::{Deserialize, Serialize};

use crate::bev::check_probability;
use crate::error::{ExqError, Result};
use crate::roots::invert_increasing;
use crate::special::{beta_pdf, binomial_lower_cdf};

/// Simplex dimension. Only the bivariate case is supported.
pub const DIM: usize = 2;

/// A coordinate `w₁ ∈ (0, 1)` on the unit simplex (`w₂ = 1 − w₁`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngularPoint(f64);

impl AngularPoint {
    pub fn new(w: f64) -> Result<Self> {
        if w > 0.0 && w < 1.0 {
            Ok(Self(w))
        } else {
            Err(ExqError::Domain(format!(
                "angular coordinate must lie in (0, 1) (got {w})"
            )))
        }
    }

    pub fn w(&self) -> f64 {
        self.0
    }
}

/// Multi-index `(α₁, α₂)` of a Bernstein basis function.
pub type MultiIndex = [u32; 2];

/// Dirichlet (here Beta) basis density `dir₂(w; α)`.
pub fn dirichlet_density(w: AngularPoint, alpha: MultiIndex) -> f64 {
    beta_pdf(w.0, alpha[0] as f64, alpha[1] as f64)
}

/// Resolved Bernstein weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AngularWeights {
    order: u32,
    /// Weights indexed by `α₁ − 1`, i.e. `weights[k]` belongs to `(k+1, J-k-1)`.
    weights: Vec<f64>,
    logits: Vec<f64>,
}

impl AngularWeights {
    /// Polynomial order `J`.
    pub fn order(&self) -> u32 {
        self.order
    }

    /// Number of basis functions `m = J − 1`.
    pub fn basis_len(&self) -> usize {
        self.weights.len()
    }

    /// Multi-indices in the order of [`weights`](Self::weights).
    pub fn indices(&self) -> Vec<MultiIndex> {
        (1..self.order).map(|a1| [a1, self.order - a1]).collect()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Logits of the free weights.
    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    /// Free weights `{π_α : α ∈ F}`.
    pub fn free_weights(&self) -> &[f64] {
        if self.weights.len() <= 2 {
            &[]
        } else {
            &self.weights[1..self.weights.len() - 1]
        }
    }

    #[cfg(test)]
    pub(crate) fn from_raw_unchecked(order: u32, weights: Vec<f64>) -> Self {
        Self {
            order,
            weights,
            logits: vec![],
        }
    }

    /// The uniform angular density (all logits zero).
    pub fn uniform(order: u32) -> Result<Self> {
        let n_free = free_len(order)?;
        resolve_weights(&vec![0.0; n_free], order)
    }

    /// Normalization and mean-constraint residuals `(Σπ − 1, Σα₁π − J/2)`.
    pub fn constraint_residuals(&self) -> (f64, f64) {
        let total: f64 = self.weights.iter().sum();
        let mean: f64 = self.weights.iter().enumerate().map(|(k, p)| (k + 1) as f64 * p).sum();
        (total - 1.0, mean - self.order as f64 / 2.0)
    }

    /// Angular density `h(w)`.
    pub fn density(&self, w: AngularPoint) -> f64 {
        let j = self.order as f64;
        self.weights
            .iter()
            .enumerate()
            .map(|(k, &p)| {
                let a1 = (k + 1) as f64;
                p * beta_pdf(w.0, a1, j - a1)
            })
            .sum()
    }

    /// Exponent measure `V(x, y) = 2∫ max(w/x, (1−w)/y) h(w) dw`, in closed form.
    pub fn exponent_measure(&self, x: f64, y: f64) -> f64 {
        let (w, one_minus_w) = split_angle(x, y);
        let lower = binomial_lower_cdf(self.order, w, one_minus_w);
        self.exponent_from_cdf(&lower, x, y)
    }

    fn exponent_from_cdf(&self, lower: &[f64], x: f64, y: f64) -> f64 {
        // With n = J: 1 − Be(w; α₁+1, α₂) = P(Bin ≤ α₁) and
        // Be(w; α₁, α₂+1) = P(Bin ≥ α₁) = 1 − P(Bin ≤ α₁ − 1).
        let j = self.order as f64;
        let sum: f64 = self
            .weights
            .iter()
            .enumerate()
            .map(|(k, &p)| {
                let a1 = k + 1;
                let a2 = j - a1 as f64;
                let upper_part = lower[a1];
                let lower_part = 1.0 - lower[a1 - 1];
                p * (a1 as f64 * upper_part / x + a2 * lower_part / y)
            })
            .sum();
        2.0 / j * sum
    }

    /// `log G_{Y|X}(y | x)` induced by the Bernstein angular density:
    /// `(2/J) exp{−V(x,y) + 1/x} Σ π_α α₁ {1 − Be(w(x,y); α₁+1, α₂)}`.
    pub fn log_conditional_cdf(&self, y: f64, x: f64) -> Result<f64> {
        check_positive(x, y)?;
        let (w, one_minus_w) = split_angle(x, y);
        let lower = binomial_lower_cdf(self.order, w, one_minus_w);
        let v = self.exponent_from_cdf(&lower, x, y);
        let j = self.order as f64;
        let tail: f64 = self
            .weights
            .iter()
            .enumerate()
            .map(|(k, &p)| p * (k + 1) as f64 * lower[k + 1])
            .sum();
        let log_val = (2.0 / j).ln() + tail.max(1e-300).ln() - v + 1.0 / x;
        Ok(log_val.min(0.0))
    }

    /// Conditional CDF `G_{Y|X}(y | x)`.
    pub fn conditional_cdf(&self, y: f64, x: f64) -> Result<f64> {
        Ok(self.log_conditional_cdf(y, x)?.exp())
    }

    /// Conditional quantile `y_{q|x}` by bracketed inversion in `log y`.
    pub fn conditional_quantile(&self, q: f64, x: f64) -> Result<f64> {
        check_probability(q)?;
        check_positive(x, 1.0)?;
        invert_increasing(
            |y| self.log_conditional_cdf(y, x).map(f64::exp).unwrap_or(f64::NAN),
            q,
            1e-6,
            x.max(1.0),
        )
    }
}

fn check_positive(x: f64, y: f64) -> Result<()> {
    if x > 0.0 && y > 0.0 {
        Ok(())
    } else {
        Err(ExqError::Domain(format!("x and y must be positive (got x={x}, y={y})")))
    }
}

/// `(x/(x+y), y/(x+y))` computed without cancellation.
fn split_angle(x: f64, y: f64) -> (f64, f64) {
    if x >= y {
        let r = y / x;
        (1.0 / (1.0 + r), r / (1.0 + r))
    } else {
        let r = x / y;
        (r / (1.0 + r), 1.0 / (1.0 + r))
    }
}

/// Number of free weights `|F| = m − d` for order `J` (zero for `J = 2`).
pub fn free_len(order: u32) -> Result<usize> {
    if order < 2 {
        return Err(ExqError::InvalidParameter(format!(
            "Bernstein order must be at least 2 (got {order})"
        )));
    }
    Ok((order as usize).saturating_sub(3))
}

/// Maps free logits to a full, constraint-satisfying weight vector.
///
/// Free weights follow the generalized logit with denominator
/// `2 + Σ exp(π')`; the pinned weights `a = π_(1,J−1)` and `b = π_(J−1,1)`
/// solve `a + b = 1 − S` and `a + (J−1) b = J/2 − M`, where `S` and `M` are
/// the free weights' total and first moment. Fails when either pinned weight
/// is not strictly positive.
pub fn resolve_weights(logits: &[f64], order: u32) -> Result<AngularWeights> {
    let n_free = free_len(order)?;
    if logits.len() != n_free {
        return Err(ExqError::ShapeMismatch {
            expected: n_free,
            got: logits.len(),
        });
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(ExqError::Domain("logits must be finite".into()));
    }
    if order == 2 {
        return Ok(AngularWeights {
            order,
            weights: vec![1.0],
            logits: vec![],
        });
    }
    // Shift by the largest logit so exp never overflows.
    let shift = logits.iter().copied().fold(0.0f64, f64::max);
    let scaled: Vec<f64> = logits.iter().map(|l| (l - shift).exp()).collect();
    let denom = DIM as f64 * (-shift).exp() + scaled.iter().sum::<f64>();
    let free: Vec<f64> = scaled.iter().map(|e| e / denom).collect();

    let j = order as f64;
    let s: f64 = free.iter().sum();
    let m: f64 = free.iter().enumerate().map(|(k, p)| (k + 2) as f64 * p).sum();
    let b = (j / 2.0 - 1.0 - m + s) / (j - 2.0);
    let a = 1.0 - s - b;
    let m_basis = order as usize - 1;
    if !(a > 0.0) {
        return Err(ExqError::InfeasibleWeights { index: 0, value: a });
    }
    if !(b > 0.0) {
        return Err(ExqError::InfeasibleWeights {
            index: m_basis - 1,
            value: b,
        });
    }
    if free.iter().any(|&p| !(p > 0.0)) {
        let (index, &value) = free
            .iter()
            .enumerate()
            .find(|(_, p)| !(**p > 0.0))
            .expect("checked above");
        return Err(ExqError::InfeasibleWeights {
            index: index + 1,
            value,
        });
    }
    let mut weights = Vec::with_capacity(m_basis);
    weights.push(a);
    weights.extend_from_slice(&free);
    weights.push(b);
    Ok(AngularWeights {
        order,
        weights,
        logits: logits.to_vec(),
    })
}

/// JSON form of a weight vector: order, ordered multi-indices and weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AngularWeightsRecord {
    #[serde(rename = "J")]
    pub order: u32,
    pub indices: Vec<MultiIndex>,
    pub weights: Vec<f64>,
    #[serde(default)]
    pub logits: Vec<f64>,
}

impl From<&AngularWeights> for AngularWeightsRecord {
    fn from(w: &AngularWeights) -> Self {
        Self {
            order: w.order,
            indices: w.indices(),
            weights: w.weights.clone(),
            logits: w.logits.clone(),
        }
    }
}

impl TryFrom<AngularWeightsRecord> for AngularWeights {
    type Error = ExqError;

    fn try_from(rec: AngularWeightsRecord) -> Result<Self> {
        let expected: Vec<MultiIndex> = (1..rec.order).map(|a1| [a1, rec.order - a1]).collect();
        if rec.indices != expected {
            return Err(ExqError::Format(format!(
                "indices do not enumerate |α| = {} in order",
                rec.order
            )));
        }
        if rec.weights.len() != expected.len() {
            return Err(ExqError::ShapeMismatch {
                expected: expected.len(),
                got: rec.weights.len(),
            });
        }
        let w = AngularWeights {
            order: rec.order,
            weights: rec.weights,
            logits: rec.logits,
        };
        let (r0, r1) = w.constraint_residuals();
        if r0.abs() > 1e-9 || r1.abs() > 1e-9 || w.weights.iter().any(|p| !(*p > 0.0)) {
            return Err(ExqError::Format("weights violate the simplex constraints".into()));
        }
        Ok(w)
    }
}

impl Serialize for AngularWeights {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        AngularWeightsRecord::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for AngularWeights {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rec = AngularWeightsRecord::deserialize(d)?;
        AngularWeights::try_from(rec).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::integrate_gl;
    use approx::assert_relative_eq;

    fn ap(w: f64) -> AngularPoint {
        AngularPoint::new(w).unwrap()
    }

    #[test]
    fn dirichlet_examples() {
        assert_relative_eq!(dirichlet_density(ap(0.3), [1, 1]), 1.0, epsilon = 1e-14);
        assert_relative_eq!(dirichlet_density(ap(0.5), [2, 2]), 1.5, epsilon = 1e-14);
        assert_relative_eq!(dirichlet_density(ap(0.9), [3, 1]), 2.43, epsilon = 1e-13);
        let total = integrate_gl(|w| dirichlet_density(ap(w), [4, 7]), 0.0, 1.0, 64);
        assert_relative_eq!(total, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn resolve_order_four_at_zero_logit() {
        let w = resolve_weights(&[0.0], 4).unwrap();
        for p in w.weights() {
            assert_relative_eq!(*p, 1.0 / 3.0, epsilon = 1e-15);
        }
        let (r0, r1) = w.constraint_residuals();
        assert!(r0.abs() < 1e-15 && r1.abs() < 1e-15);
        assert_eq!(w.indices(), vec![[1, 3], [2, 2], [3, 1]]);
    }

    #[test]
    fn resolve_order_four_is_symmetric_in_t() {
        for i in 1..50 {
            let t = i as f64 / 100.0;
            // free weight 1 − 2t requires exp(π')/(2 + exp(π')) = 1 − 2t
            let free = 1.0 - 2.0 * t;
            let logit = (2.0 * free / (1.0 - free)).ln();
            let w = resolve_weights(&[logit], 4).unwrap();
            assert_relative_eq!(w.weights()[0], t, epsilon = 1e-12);
            assert_relative_eq!(w.weights()[2], t, epsilon = 1e-12);
            let (r0, r1) = w.constraint_residuals();
            assert!(r0.abs() < 1e-12 && r1.abs() < 1e-12);
        }
    }

    #[test]
    fn very_negative_logits_leave_pinned_halves() {
        let w = resolve_weights(&[-800.0; 5], 8);
        match w {
            Ok(w) => {
                assert_relative_eq!(w.weights()[0], 0.5, epsilon = 1e-12);
                assert_relative_eq!(w.weights()[6], 0.5, epsilon = 1e-12);
            }
            Err(e) => assert!(matches!(e, ExqError::InfeasibleWeights { .. })),
        }
    }

    #[test]
    fn infeasible_logits_are_rejected() {
        // all mass on the highest free index drives the right pinned weight negative
        let mut logits = vec![-30.0; 5];
        logits[4] = 30.0;
        assert!(matches!(
            resolve_weights(&logits, 8),
            Err(ExqError::InfeasibleWeights { .. })
        ));
        assert!(matches!(
            resolve_weights(&[0.0; 2], 8),
            Err(ExqError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn degenerate_order_two_is_uniform() {
        let w = AngularWeights::uniform(2).unwrap();
        for x in [0.1, 0.5, 0.77] {
            assert_relative_eq!(w.density(ap(x)), 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn density_hand_value() {
        let w = resolve_weights(&[0.0], 4).unwrap();
        assert_relative_eq!(w.density(ap(0.5)), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn conditional_limits() {
        let w = resolve_weights(&[0.4, -0.3, 0.1], 6).unwrap();
        assert!(w.conditional_cdf(1e12, 2.0).unwrap() > 1.0 - 1e-9);
        assert!(w.conditional_cdf(1e-8, 2.0).unwrap() < 1e-12);
        assert!(w.conditional_cdf(0.0, 2.0).is_err());
    }

    #[test]
    fn uniform_h_conditional_quantile_is_monotone() {
        let w = AngularWeights::uniform(2).unwrap();
        let mut prev = 0.0;
        for q in [0.1, 0.5, 0.9, 0.99] {
            let y = w.conditional_quantile(q, 3.0).unwrap();
            assert!((w.conditional_cdf(y, 3.0).unwrap() - q).abs() < 1e-8);
            assert!(y > prev);
            prev = y;
        }
    }

    #[test]
    fn json_round_trip_and_validation() {
        let w = resolve_weights(&[0.2, -0.1, 0.3], 6).unwrap();
        let text = serde_json::to_string(&w).unwrap();
        assert!(text.contains("\"J\":6"));
        let back: AngularWeights = serde_json::from_str(&text).unwrap();
        assert_eq!(back, w);
        let bad = text.replace("\"J\":6", "\"J\":7");
        assert!(serde_json::from_str::<AngularWeights>(&bad).is_err());
    }
}
