//! Oracles shared by the integration tests.
#![allow(dead_code)]

use exq_core::angular::AngularPoint;
use exq_core::roots::brent;
use exq_core::special::integrate_gl;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Log angular probability density of the symmetric logistic model, from `ln w`.
pub fn logistic_angular_log_density(alpha: f64, ln_w: f64) -> f64 {
    let ln_1mw = (-ln_w.exp()).ln_1p();
    let (p, q) = (-ln_w / alpha, -ln_1mw / alpha);
    let lse = p.max(q) + (-(p - q).abs()).exp().ln_1p();
    (0.5 * (1.0 / alpha - 1.0)).ln() + (-1.0 - 1.0 / alpha) * (ln_w + ln_1mw) + (alpha - 2.0) * lse
}

pub fn logistic_angular_density(alpha: f64, w: f64) -> f64 {
    logistic_angular_log_density(alpha, w.ln()).exp()
}

/// `P(W <= w)` for `w = v^{1/b} <= 1/2`, `b = 1/α − 1`; the substitution
/// removes the endpoint singularity.
fn cdf_in_v(alpha: f64, v: f64) -> f64 {
    if v <= 0.0 {
        return 0.0;
    }
    let b = 1.0 / alpha - 1.0;
    let g = |v: f64| {
        let ln_w = v.ln() / b;
        (logistic_angular_log_density(alpha, ln_w) + (1.0 - b) * ln_w - b.ln()).exp()
    };
    integrate_gl(g, 0.0, v, 64)
}

pub fn logistic_angular_cdf(alpha: f64, w: f64) -> f64 {
    let b = 1.0 / alpha - 1.0;
    if w <= 0.5 {
        cdf_in_v(alpha, w.powf(b))
    } else {
        1.0 - cdf_in_v(alpha, (1.0 - w).powf(b))
    }
}

/// Independent draws from the logistic angular measure by inverse CDF.
pub fn sample_logistic_angles(alpha: f64, n: usize, seed: u64) -> Vec<AngularPoint> {
    let b = 1.0 / alpha - 1.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let u: f64 = rng.random::<f64>() * 0.5;
            let v = brent(|v| cdf_in_v(alpha, v) - u, 0.0, 0.5f64.powf(b), 1e-17, 0.0, 200).unwrap();
            let w = (v.ln() / b).exp().max(f64::MIN_POSITIVE);
            let w = if rng.random::<bool>() { 1.0 - w } else { w };
            AngularPoint::new(w.min(1.0 - f64::EPSILON / 2.0)).unwrap()
        })
        .collect()
}

/// Draws from the order-4 Bernstein density with middle weight `t`
/// (outer weights `(1 − t)/2` each).
pub fn sample_order4(t: f64, n: usize, seed: u64) -> Vec<AngularPoint> {
    use rand_distr::{Beta, Distribution};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let comps = [
        Beta::new(1.0, 3.0).unwrap(),
        Beta::new(2.0, 2.0).unwrap(),
        Beta::new(3.0, 1.0).unwrap(),
    ];
    (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            let k = if u < t {
                1
            } else if u < t + (1.0 - t) / 2.0 {
                0
            } else {
                2
            };
            AngularPoint::new(comps[k].sample(&mut rng)).unwrap()
        })
        .collect()
}

/// Order-4 density written out by hand: `(1−t)/2·3(1−w)² + t·6w(1−w) + (1−t)/2·3w²`.
pub fn order4_density(t: f64, w: f64) -> f64 {
    let a = (1.0 - t) / 2.0;
    a * 3.0 * (1.0 - w).powi(2) + t * 6.0 * w * (1.0 - w) + a * 3.0 * w * w
}

/// Posterior of `t` on a midpoint grid of `(0, 1)`, trapezoid-normalized, under
/// the `Beta(c, c)` prior. Returns `(grid, density)`.
pub fn order4_grid_posterior(angles: &[AngularPoint], c: f64, n_grid: usize) -> (Vec<f64>, Vec<f64>) {
    let grid: Vec<f64> = (0..n_grid).map(|i| (i as f64 + 0.5) / n_grid as f64).collect();
    let logp: Vec<f64> = grid
        .iter()
        .map(|&t| {
            let ll: f64 = angles.iter().map(|w| order4_density(t, w.w()).ln()).sum();
            ll + (c - 1.0) * (t.ln() + (1.0 - t).ln())
        })
        .collect();
    let top = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let un: Vec<f64> = logp.iter().map(|l| (l - top).exp()).collect();
    let h = 1.0 / n_grid as f64;
    let z: f64 = un.windows(2).map(|p| 0.5 * (p[0] + p[1]) * h).sum();
    (grid, un.iter().map(|u| u / z).collect())
}
