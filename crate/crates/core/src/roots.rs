//! Bracketed scalar root finding used to invert monotone conditional CDFs.

use crate::error::{ExqError, Result};

/// Brent's method on a sign-changing bracket `[a, b]`.
///
/// Stops when `|f| <= ftol` or the bracket is narrower than `xtol`.
pub fn brent<F: FnMut(f64) -> f64>(
    mut f: F,
    mut a: f64,
    mut b: f64,
    xtol: f64,
    ftol: f64,
    max_iter: usize,
) -> Result<f64> {
    let mut fa = f(a);
    let mut fb = f(b);
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(ExqError::BracketFailure {
            target: 0.0,
            lo: a,
            hi: b,
        });
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for _ in 0..max_iter {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * xtol;
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb.abs() <= ftol {
            return Ok(b);
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            // inverse quadratic / secant step
            let s = fb / fa;
            let (mut p, mut q) = if a == c {
                (2.0 * m * s, 1.0 - s)
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                (
                    s * (2.0 * m * qa * (qa - r) - (b - a) * (r - 1.0)),
                    (qa - 1.0) * (r - 1.0) * (s - 1.0),
                )
            };
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(m) };
        fb = f(b);
    }
    Ok(b)
}

/// Maximum number of bracket doublings/halvings.
pub const MAX_BRACKET_STEPS: usize = 200;

/// Solves `cdf(y) = target` for a nondecreasing `cdf` on `(0, ∞)`, working
/// in `log y`.
///
/// The bracket starts at `[lo, hi]`; `hi` is doubled while `cdf(hi) < target`
/// and `lo` halved while `cdf(lo) > target`, each at most
/// [`MAX_BRACKET_STEPS`] times.
pub fn invert_increasing<F: Fn(f64) -> f64>(cdf: F, target: f64, mut lo: f64, mut hi: f64) -> Result<f64> {
    let fail = |lo: f64, hi: f64| ExqError::BracketFailure { target, lo, hi };
    let mut steps = 0;
    while cdf(hi) < target {
        hi *= 2.0;
        steps += 1;
        if steps > MAX_BRACKET_STEPS || !hi.is_finite() {
            return Err(fail(lo, hi));
        }
    }
    steps = 0;
    while cdf(lo) > target {
        lo *= 0.5;
        steps += 1;
        if steps > MAX_BRACKET_STEPS || lo == 0.0 {
            return Err(fail(lo, hi));
        }
    }
    let g = |t: f64| cdf(t.exp()) - target;
    let t = brent(g, lo.ln(), hi.ln(), 1e-15, 1e-13, 500).map_err(|_| fail(lo, hi))?;
    Ok(t.exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brent_finds_cubic_root() {
        let r = brent(|x| x * x * x - 2.0 * x - 5.0, 2.0, 3.0, 1e-14, 0.0, 100).unwrap();
        assert!((r - 2.094_551_481_542_326_5).abs() < 1e-12);
    }

    #[test]
    fn brent_rejects_non_bracket() {
        assert!(matches!(
            brent(|x| x * x + 1.0, -1.0, 1.0, 1e-12, 0.0, 100),
            Err(ExqError::BracketFailure { .. })
        ));
    }

    #[test]
    fn inversion_expands_bracket() {
        // unit Fréchet quantile, far above the initial bracket
        let q = 0.999_999;
        let y = invert_increasing(|y| (-1.0 / y).exp(), q, 1e-6, 1.0).unwrap();
        assert!(((-1.0 / y).exp() - q).abs() < 1e-12);
    }

    #[test]
    fn inversion_reports_plateau() {
        let err = invert_increasing(|_| 0.5, 0.9, 1e-6, 1.0).unwrap_err();
        assert!(matches!(err, ExqError::BracketFailure { .. }));
    }
}
