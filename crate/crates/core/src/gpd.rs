//! Generalized Pareto tail: exceedance probabilities, the orthogonal
//! `(ν, ξ)` parametrization, its deviance and gradient, and quantile
//! extrapolation above an intermediate threshold.

use serde::{Deserialize, Serialize};

use crate::error::{ExqError, Result};

/// Below this |ξ| the exponential-limit series are used.
pub const XI_ZERO_BAND: f64 = 1e-6;

/// Lower bound on ξ for which the orthogonal parametrization is regular.
pub const XI_LOWER: f64 = -0.5;

/// GPD scale/shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpdParams {
    pub sigma: f64,
    pub xi: f64,
}

/// Orthogonal parametrization `ν = σ(ξ + 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrthoGpdParams {
    pub nu: f64,
    pub xi: f64,
}

impl GpdParams {
    pub fn new(sigma: f64, xi: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(ExqError::InvalidParameter(format!(
                "sigma must be positive (got {sigma})"
            )));
        }
        check_xi(xi)?;
        Ok(Self { sigma, xi })
    }

    pub fn reparam(&self) -> OrthoGpdParams {
        OrthoGpdParams {
            nu: self.sigma * (self.xi + 1.0),
            xi: self.xi,
        }
    }
}

impl OrthoGpdParams {
    pub fn new(nu: f64, xi: f64) -> Result<Self> {
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(ExqError::InvalidParameter(format!("nu must be positive (got {nu})")));
        }
        check_xi(xi)?;
        Ok(Self { nu, xi })
    }

    pub fn inverse_reparam(&self) -> GpdParams {
        GpdParams {
            sigma: self.nu / (self.xi + 1.0),
            xi: self.xi,
        }
    }

    pub fn sigma(&self) -> f64 {
        self.nu / (self.xi + 1.0)
    }
}

fn check_xi(xi: f64) -> Result<()> {
    if xi > XI_LOWER && xi.is_finite() {
        Ok(())
    } else {
        Err(ExqError::InvalidParameter(format!("xi must exceed -0.5 (got {xi})")))
    }
}

/// `P(Y > y | X) ≈ (1 − τ₀)(1 + ξ(y − u)/σ)₊^{−1/ξ}` for `y > u`.
pub fn gpd_exceedance_prob(y: f64, u: f64, p: GpdParams, tau0: f64) -> Result<f64> {
    if !(y > u) {
        return Err(ExqError::Domain(format!("exceedance needs y > u (got y={y}, u={u})")));
    }
    check_unit(tau0)?;
    let z = (y - u) / p.sigma;
    let survival = if p.xi.abs() < XI_ZERO_BAND {
        // log(1 + ξz)/ξ = z − ξz²/2 + O(ξ²)
        (-(z - 0.5 * p.xi * z * z)).exp()
    } else {
        let base = 1.0 + p.xi * z;
        if base <= 0.0 {
            0.0
        } else {
            (-(p.xi * z).ln_1p() / p.xi).exp()
        }
    };
    Ok((1.0 - tau0) * survival)
}

/// Deviance of one exceedance under the orthogonal parametrization:
/// `(1 + 1/ξ) log{1 + ξ(ξ+1)z/ν} + log ν − log(ξ + 1)`.
///
/// Returns `+∞` when `z` lies beyond the finite endpoint (ξ < 0).
pub fn ogpd_loss(z: f64, nu: f64, xi: f64) -> f64 {
    let u = (xi + 1.0) * z / nu;
    if xi.abs() < XI_ZERO_BAND {
        // series of the full loss around ξ = 0
        let r = z / nu;
        return r + nu.ln() + xi * (-1.0 + 2.0 * r - 0.5 * r * r) + xi * xi * (0.5 + r - 1.5 * r * r + r * r * r / 3.0);
    }
    let arg = xi * u;
    if arg <= -1.0 {
        return f64::INFINITY;
    }
    (1.0 + 1.0 / xi) * arg.ln_1p() + nu.ln() - xi.ln_1p()
}

/// Analytic gradient `(∂/∂ν, ∂/∂ξ)` of [`ogpd_loss`]; zero outside the support.
pub fn ogpd_loss_grad(z: f64, nu: f64, xi: f64) -> (f64, f64) {
    let r = z / nu;
    if xi.abs() < XI_ZERO_BAND {
        let d_nu = (1.0 - r) / nu + xi * (-2.0 * r + r * r) / nu;
        let d_xi = -1.0 + 2.0 * r - 0.5 * r * r + xi * (1.0 + 2.0 * r - 3.0 * r * r + 2.0 * r * r * r / 3.0);
        return (d_nu, d_xi);
    }
    let arg = xi * (xi + 1.0) * r;
    if arg <= -1.0 {
        return (0.0, 0.0);
    }
    let a = 1.0 + arg;
    let d_nu = 1.0 / nu - (xi + 1.0) * (xi + 1.0) * r / (nu * a);
    let d_xi = -arg.ln_1p() / (xi * xi) + (1.0 + 1.0 / xi) * (2.0 * xi + 1.0) * r / a - 1.0 / (1.0 + xi);
    (d_nu, d_xi)
}

/// Extreme quantile at level `τ > τ₀` above the intermediate quantile `q0`:
/// `q0 + (σ/ξ)[((1−τ₀)/(1−τ))^ξ − 1]`, `q0 + σ log((1−τ₀)/(1−τ))` at ξ = 0.
pub fn extrapolate_quantile(q0: f64, o: OrthoGpdParams, tau0: f64, tau: f64) -> Result<f64> {
    check_unit(tau0)?;
    check_unit(tau)?;
    if !(tau > tau0) {
        return Err(ExqError::Domain(format!(
            "need tau > tau0 (got tau={tau}, tau0={tau0})"
        )));
    }
    let sigma = o.sigma();
    let log_ratio = ((1.0 - tau0) / (1.0 - tau)).ln();
    let excess = if o.xi.abs() < XI_ZERO_BAND {
        sigma * log_ratio * (1.0 + 0.5 * o.xi * log_ratio)
    } else {
        sigma * (o.xi * log_ratio).exp_m1() / o.xi
    };
    Ok(q0 + excess)
}

/// Return-level probability `1 − 1/(n_Y · T)` for `n_Y` records per year
/// and a `T`-year return period.
pub fn return_level_tau(records_per_year: u32, period_years: u32) -> Result<f64> {
    let n = records_per_year as f64 * period_years as f64;
    if !(n > 1.0) {
        return Err(ExqError::Domain(format!(
            "return level needs nY·T > 1 (got {records_per_year}·{period_years})"
        )));
    }
    Ok(1.0 - 1.0 / n)
}

fn check_unit(p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(ExqError::Domain(format!("probability must lie in (0, 1) (got {p})")))
    }
}
