//! Linear quantile regression by iteratively reweighted least squares.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ExqError, Result};

/// Residual floor in the IRLS weights.
pub const IRLS_EPSILON: f64 = 1e-8;
pub const IRLS_MAX_ITER: usize = 50;
pub const IRLS_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearQrModel {
    /// Intercept followed by one slope per feature.
    pub beta: Vec<f64>,
    pub tau: f64,
}

/// Check loss `ρ_τ(u) = u(τ − 1{u < 0})`.
pub fn pinball(u: f64, tau: f64) -> f64 {
    if u < 0.0 {
        u * (tau - 1.0)
    } else {
        u * tau
    }
}

impl LinearQrModel {
    pub fn predict(&self, row: &[f64]) -> Result<f64> {
        if row.len() + 1 != self.beta.len() {
            return Err(ExqError::ShapeMismatch {
                expected: self.beta.len() - 1,
                got: row.len(),
            });
        }
        Ok(self.beta[0] + row.iter().zip(&self.beta[1..]).map(|(x, b)| x * b).sum::<f64>())
    }

    /// `Σ ρ_τ(y_i − x_iᵀβ)`.
    pub fn objective(&self, x: &[Vec<f64>], y: &[f64]) -> Result<f64> {
        check_shapes(x, y)?;
        x.iter()
            .zip(y)
            .map(|(row, &yi)| Ok(pinball(yi - self.predict(row)?, self.tau)))
            .sum()
    }
}

fn check_shapes(x: &[Vec<f64>], y: &[f64]) -> Result<usize> {
    if x.len() != y.len() {
        return Err(ExqError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    let p = x.first().map_or(0, |r| r.len());
    if let Some(r) = x.iter().find(|r| r.len() != p) {
        return Err(ExqError::ShapeMismatch {
            expected: p,
            got: r.len(),
        });
    }
    Ok(p)
}

fn objective(design: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>, tau: f64) -> f64 {
    (y - design * beta).iter().map(|&r| pinball(r, tau)).sum()
}

/// Minimizes `Σ ρ_τ(y − Xβ)` with an intercept, starting from least squares.
///
/// Each step solves the weighted normal equations with weights
/// `(τ or 1 − τ)/max(|r_i|, ε)`; the iterate with the smallest objective is kept.
pub fn fit_linear_qr(x: &[Vec<f64>], y: &[f64], tau: f64) -> Result<LinearQrModel> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(ExqError::Domain(format!("tau must lie in (0, 1) (got {tau})")));
    }
    let p = check_shapes(x, y)?;
    let n = y.len();
    if n < p + 2 {
        return Err(ExqError::InsufficientData { needed: p + 2, got: n });
    }
    let design = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { x[i][j - 1] });
    let yv = DVector::from_column_slice(y);

    let gram = design.transpose() * &design;
    let eig = gram.clone().symmetric_eigen();
    let (lo, hi) = eig
        .eigenvalues
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v.abs())));
    if !(lo > hi * 1e-12) {
        return Err(ExqError::RankDeficient);
    }
    let mut beta = solve_spd(gram, design.transpose() * &yv)?;
    let mut best = (objective(&design, &yv, &beta, tau), beta.clone());

    for _ in 0..IRLS_MAX_ITER {
        let resid = &yv - &design * &beta;
        let w = DVector::from_iterator(
            n,
            resid.iter().map(|&r| {
                let side = if r < 0.0 { 1.0 - tau } else { tau };
                side / r.abs().max(IRLS_EPSILON)
            }),
        );
        let mut weighted = design.clone();
        for (mut row, wi) in weighted.row_iter_mut().zip(w.iter()) {
            row *= *wi;
        }
        let lhs = design.transpose() * &weighted;
        let rhs = weighted.transpose() * &yv;
        let next = match solve_spd(lhs, rhs) {
            Ok(b) => b,
            Err(_) => break,
        };
        let step = (&next - &beta).amax();
        beta = next;
        let obj = objective(&design, &yv, &beta, tau);
        if obj < best.0 {
            best = (obj, beta.clone());
        }
        if step < IRLS_TOL {
            break;
        }
    }
    let beta: Vec<f64> = best.1.iter().copied().collect();
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(ExqError::RankDeficient);
    }
    Ok(LinearQrModel { beta, tau })
}

fn solve_spd(a: DMatrix<f64>, b: DVector<f64>) -> Result<DVector<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        return Ok(ch.solve(&b));
    }
    a.lu().solve(&b).ok_or(ExqError::RankDeficient)
}
