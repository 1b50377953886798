//! Parametric bivariate extreme-value distributions on unit-Fréchet margins.
//!
//! Every model is written as `G(x, y) = exp{-V(x, y)}` with exponent measure
//! `V`. The conditional distribution of `Y` given `X = x` is
//! `G_{Y|X}(y|x) = -∂V/∂x · x² · G(x, y) · exp(1/x)`, evaluated in log space
//! because unit-Fréchet coordinates routinely reach 1e6 and beyond.

use serde::{Deserialize, Serialize};

use crate::error::{ExqError, Result};
use crate::roots::invert_increasing;
use crate::special::{beta_pdf, norm_cdf, reg_inc_beta_unchecked};

/// Smallest value a bracketed probability factor is allowed to take before
/// its logarithm is formed.
const PROB_FLOOR: f64 = 1e-300;

/// A point on the unit-Fréchet scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrechetPoint {
    x: f64,
    y: f64,
}

impl FrechetPoint {
    pub fn new(x: f64, y: f64) -> Result<Self> {
        check_positive("x", x)?;
        check_positive("y", y)?;
        Ok(Self { x, y })
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    /// Pseudo-angle `w = x / (x + y)`.
    pub fn pseudo_angle(&self) -> f64 {
        self.x / (self.x + self.y)
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && !v.is_nan() {
        Ok(())
    } else {
        Err(ExqError::Domain(format!("{name} must be positive (got {v})")))
    }
}

/// Parametric dependence families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum BevModel {
    /// `V = (x^{-1/α} + y^{-1/α})^α`, `0 < α <= 1`; α = 1 is independence.
    Logistic { alpha: f64 },
    /// Hüsler–Reiss with dependence parameter λ > 0 (λ → 0 perfect dependence).
    HuslerReiss { lambda: f64 },
    /// Coles–Tawn (Dirichlet) model with α, β > 0.
    ColesTawn { alpha: f64, beta: f64 },
}

impl BevModel {
    pub fn logistic(alpha: f64) -> Result<Self> {
        Self::Logistic { alpha }.validated()
    }

    pub fn husler_reiss(lambda: f64) -> Result<Self> {
        Self::HuslerReiss { lambda }.validated()
    }

    pub fn coles_tawn(alpha: f64, beta: f64) -> Result<Self> {
        Self::ColesTawn { alpha, beta }.validated()
    }

    /// Checks the parameter ranges; used after deserialization as well.
    pub fn validated(self) -> Result<Self> {
        let ok = match self {
            BevModel::Logistic { alpha } => alpha > 0.0 && alpha <= 1.0,
            BevModel::HuslerReiss { lambda } => lambda > 0.0 && lambda.is_finite(),
            BevModel::ColesTawn { alpha, beta } => alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite(),
        };
        if ok {
            Ok(self)
        } else {
            Err(ExqError::InvalidParameter(format!("{self:?} is out of range")))
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BevModel::Logistic { .. } => "logistic",
            BevModel::HuslerReiss { .. } => "husler_reiss",
            BevModel::ColesTawn { .. } => "coles_tawn",
        }
    }

    /// Exponent measure `V(x, y)`.
    pub fn exponent_measure(&self, p: FrechetPoint) -> f64 {
        let (x, y) = (p.x, p.y);
        match *self {
            BevModel::Logistic { alpha } => (alpha * logistic_log_sum(alpha, x, y)).exp(),
            BevModel::HuslerReiss { lambda } => {
                let (a, b) = hr_arguments(lambda, x, y);
                norm_cdf(a) / x + norm_cdf(b) / y
            }
            BevModel::ColesTawn { alpha, beta } => {
                let (r, one_minus_r) = ct_argument(alpha, beta, x, y);
                let upper = reg_inc_beta_unchecked(one_minus_r, beta, alpha + 1.0);
                let lower = reg_inc_beta_unchecked(r, alpha, beta + 1.0);
                upper / x + lower / y
            }
        }
    }

    /// Joint CDF `G(x, y) = exp{-V(x, y)}`.
    pub fn joint_cdf(&self, p: FrechetPoint) -> f64 {
        (-self.exponent_measure(p)).exp()
    }

    /// Extremal coefficient `V(1, 1)`, between 1 (perfect dependence) and 2.
    pub fn extremal_coefficient(&self) -> f64 {
        self.exponent_measure(FrechetPoint { x: 1.0, y: 1.0 })
    }

    /// `log G_{Y|X}(y | x)`.
    pub fn log_conditional_cdf(&self, y: f64, x: f64) -> Result<f64> {
        let p = FrechetPoint::new(x, y)?;
        let v = self.exponent_measure(p);
        let log_bracket = match *self {
            BevModel::Logistic { alpha } => {
                // (x^{-1/α} + y^{-1/α})^{α-1} x^{1-1/α}
                (alpha - 1.0) * logistic_log_sum(alpha, x, y) + (1.0 - 1.0 / alpha) * x.ln()
            }
            BevModel::HuslerReiss { lambda } => {
                // Φ(a) + φ(a)/(2λ) − (x/y)·φ(b)/(2λ); the density terms cancel
                // exactly because φ(a)/x = φ(b)/y, leaving Φ(a).
                let (a, _) = hr_arguments(lambda, x, y);
                norm_cdf(a).max(PROB_FLOOR).ln()
            }
            BevModel::ColesTawn { alpha, beta } => {
                // reduced form of `coles_tawn_bracket`
                let (_, one_minus_r) = ct_argument(alpha, beta, x, y);
                reg_inc_beta_unchecked(one_minus_r, beta, alpha + 1.0)
                    .max(PROB_FLOOR)
                    .ln()
            }
        };
        Ok((log_bracket - v + 1.0 / x).min(0.0))
    }

    /// Conditional CDF `G_{Y|X}(y | x)`.
    pub fn conditional_cdf(&self, y: f64, x: f64) -> Result<f64> {
        Ok(self.log_conditional_cdf(y, x)?.exp())
    }

    /// Conditional quantile `y_{q|x} = inf{y > 0 : G_{Y|X}(y|x) >= q}`.
    pub fn conditional_quantile(&self, q: f64, x: f64) -> Result<f64> {
        check_probability(q)?;
        check_positive("x", x)?;
        invert_increasing(
            |y| self.log_conditional_cdf(y, x).map(f64::exp).unwrap_or(f64::NAN),
            q,
            1e-6,
            x.max(1.0),
        )
    }
}

pub(crate) fn check_probability(q: f64) -> Result<()> {
    if q > 0.0 && q < 1.0 {
        Ok(())
    } else {
        Err(ExqError::Domain(format!("probability must lie in (0, 1) (got {q})")))
    }
}

/// `log(x^{-1/α} + y^{-1/α})` via log-sum-exp.
fn logistic_log_sum(alpha: f64, x: f64, y: f64) -> f64 {
    let lx = -x.ln() / alpha;
    let ly = -y.ln() / alpha;
    let m = lx.max(ly);
    m + ((lx - m).exp() + (ly - m).exp()).ln()
}

fn hr_arguments(lambda: f64, x: f64, y: f64) -> (f64, f64) {
    let log_ratio = (y / x).ln();
    let a = lambda + log_ratio / (2.0 * lambda);
    let b = lambda - log_ratio / (2.0 * lambda);
    (a, b)
}

/// Beta argument `r = αy⁻¹ / (αy⁻¹ + βx⁻¹) = αx / (αx + βy)` and its complement.
fn ct_argument(alpha: f64, beta: f64, x: f64, y: f64) -> (f64, f64) {
    let ratio = (beta * y) / (alpha * x);
    let r = 1.0 / (1.0 + ratio);
    let one_minus_r = ratio / (1.0 + ratio);
    (r, one_minus_r)
}

/// Bracketed factor of the Coles–Tawn conditional CDF with normalizer
/// `γ = α/y + β/x`.
///
/// The two density terms are equal, since
/// `(α+1)β·be(r; α+2, β+1) = α(β+1)(x/y)·be(r; α+1, β+2)`, so the factor
/// reduces to `1 − Be(r; α+1, β)` for any γ. The conditional CDF uses the
/// reduced form; this one loses ~1e-11 to cancellation when β is large.
pub fn coles_tawn_bracket(alpha: f64, beta: f64, x: f64, y: f64) -> f64 {
    let (r, one_minus_r) = ct_argument(alpha, beta, x, y);
    let gamma = alpha / y + beta / x;
    let survival = reg_inc_beta_unchecked(one_minus_r, beta, alpha + 1.0);
    let t1 = (alpha + 1.0) * beta / gamma * beta_pdf(r, alpha + 2.0, beta + 1.0);
    let t2 = (x / y) * alpha * (beta + 1.0) / gamma * beta_pdf(r, alpha + 1.0, beta + 2.0);
    survival + (t1 - t2)
}

/// First-order large-`x` approximation of the logistic regression line,
/// `ỹ_{q|x} = intercept(α, q) + slope(α, q)·x` with
/// `slope = {q^{-1/(1-α)} − 1}^{-α}` and
/// `intercept = α/(1−α) · {q^{1/(α−1)} − 1}^{−α−1} · {q^{α/(α−1)} − 1} · q^{1/(α−1)}`.
///
/// Valid for `x >> 1`; the relative error against exact inversion decays
/// like `1/x²`.
pub fn logistic_manifold_approx(alpha: f64, q: f64, x: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(ExqError::Domain(format!(
            "manifold approximation needs 0 < alpha < 1 (got {alpha})"
        )));
    }
    check_probability(q)?;
    if !(x >= 1.0) {
        return Err(ExqError::Domain(format!(
            "manifold approximation needs x >= 1 (got {x})"
        )));
    }
    let (intercept, slope) = logistic_manifold_coefficients(alpha, q);
    Ok(intercept + slope * x)
}

/// `(intercept, slope)` of [`logistic_manifold_approx`].
pub fn logistic_manifold_coefficients(alpha: f64, q: f64) -> (f64, f64) {
    let base = q.powf(1.0 / (alpha - 1.0)); // = q^{-1/(1-α)} > 1
    let excess = base - 1.0;
    let slope = excess.powf(-alpha);
    let intercept = alpha / (1.0 - alpha) * excess.powf(-alpha - 1.0) * (q.powf(alpha / (alpha - 1.0)) - 1.0) * base;
    (intercept, slope)
}
