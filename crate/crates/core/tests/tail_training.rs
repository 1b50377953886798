//! Training-level checks of the forest + tail-network pipeline.

use exq_core::baseline::{fit_quantile_forest, ForestConfig};
use exq_core::eval::{default_alignment, fit_eqrn, make_windows, CovariateTransform, EqrnPipelineConfig};
use exq_core::network::{train, Architecture, EqrnConfig, ExceedanceSet};
use exq_core::scenario::{simulate, SplitLabel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// GPD(σ, ξ) draws paired with pure-noise windows.
fn gpd_set(n: usize, sigma: f64, xi: f64, width: usize, rng: &mut ChaCha8Rng) -> ExceedanceSet {
    let z = (0..n)
        .map(|_| {
            let u: f64 = 1.0 - rng.random::<f64>();
            sigma / xi * (u.powf(-xi) - 1.0)
        })
        .collect();
    let windows = (0..n)
        .map(|_| (0..width).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    ExceedanceSet {
        indices: (0..n).collect(),
        z,
        windows,
    }
}

fn gpd_loglik(z: &[f64], sigma: f64, xi: f64) -> f64 {
    z.iter()
        .map(|&v| {
            let a = 1.0 + xi * v / sigma;
            if a <= 0.0 {
                f64::NEG_INFINITY
            } else {
                -sigma.ln() - (1.0 + 1.0 / xi) * a.ln()
            }
        })
        .sum()
}

/// Maximum likelihood by profiling: golden section in `ln σ` for each `ξ` on a grid.
fn gpd_mle(z: &[f64]) -> (f64, f64) {
    let profile = |xi: f64| {
        let (mut a, mut b) = (-4.0f64, 4.0f64);
        let g = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..80 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if gpd_loglik(z, c.exp(), xi) > gpd_loglik(z, d.exp(), xi) {
                b = d;
            } else {
                a = c;
            }
        }
        let s = (0.5 * (a + b)).exp();
        (gpd_loglik(z, s, xi), s)
    };
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
    for i in 0..=1000 {
        let xi = -0.3 + i as f64 * 1e-3;
        if xi.abs() < 1e-9 {
            continue;
        }
        let (ll, s) = profile(xi);
        if ll > best.0 {
            best = (ll, s, xi);
        }
    }
    (best.1, best.2)
}

#[test]
fn constant_gpd_parameters_are_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (window, features) = (10, 2);
    let tr = gpd_set(3000, 1.0, 0.2, window * features, &mut rng);
    let va = gpd_set(1000, 1.0, 0.2, window * features, &mut rng);
    let cfg = EqrnConfig {
        architecture: Architecture::Feedforward,
        window,
        seed: 4,
        ..EqrnConfig::default()
    };
    let model = train(&tr, &va, features, &cfg).unwrap();
    let n = tr.windows.len() as f64;
    let (mut nu, mut xi) = (0.0, 0.0);
    for w in &tr.windows {
        let p = model.forward(w).unwrap();
        nu += p.nu / n;
        xi += p.xi / n;
    }
    let (sigma_mle, xi_mle) = gpd_mle(&tr.z);
    let nu_mle = sigma_mle * (1.0 + xi_mle);
    assert!(
        (nu - 1.2).abs() <= 0.1 && (xi - 0.2).abs() <= 0.1,
        "fitted nu {nu}, xi {xi}"
    );
    assert!(
        (nu - nu_mle).abs() <= 0.1 && (xi - xi_mle).abs() <= 0.1,
        "fit ({nu}, {xi}) vs MLE ({nu_mle}, {xi_mle})"
    );
}

fn scenario1_pipeline(l2_lambda: f64) -> EqrnPipelineConfig {
    EqrnPipelineConfig {
        alignment: default_alignment(1),
        transform: CovariateTransform::Identity,
        response: CovariateTransform::Identity,
        forest: ForestConfig {
            n_trees: 300,
            seed: 5,
            ..ForestConfig::default()
        },
        eqrn: EqrnConfig {
            l2_lambda,
            seed: 6,
            ..EqrnConfig::default()
        },
    }
}

#[test]
fn doubling_the_penalty_is_not_destabilizing() {
    let ds = simulate(1, 7000, 77).unwrap();
    let best = |lambda: f64| {
        let fit = fit_eqrn(&ds, &scenario1_pipeline(lambda)).unwrap();
        fit.model.training_log[fit.model.best_epoch].valid_loss
    };
    let (base, doubled) = (best(1e-4), best(2e-4));
    assert!(
        doubled <= base + 0.2 * base.abs(),
        "best validation loss {base} -> {doubled}"
    );
}

#[test]
fn scenario1_exceedance_count_is_binomial() {
    let ds = simulate(1, 7000, 78).unwrap();
    let cfg = scenario1_pipeline(1e-4);
    let fit = fit_eqrn(
        &ds,
        &EqrnPipelineConfig {
            eqrn: EqrnConfig {
                max_epochs: 1,
                ..cfg.eqrn.clone()
            },
            ..cfg
        },
    )
    .unwrap();
    let w = make_windows(&ds, 10, default_alignment(1)).unwrap();
    for (label, count) in [
        (SplitLabel::Train, fit.train_exceedances),
        (SplitLabel::Valid, fit.valid_exceedances),
    ] {
        let n = w.positions(&ds, label).len() as f64;
        let (mean, sd) = (0.1 * n, (n * 0.1 * 0.9).sqrt());
        assert!(
            (count as f64 - mean).abs() <= 3.0 * sd,
            "{label:?}: {count} exceedances of {n}"
        );
    }
}

#[test]
fn out_of_bag_quantiles_cover_at_nominal_level() {
    let ds = simulate(1, 7000, 79).unwrap();
    let w = make_windows(&ds, 10, default_alignment(1)).unwrap();
    let y: Vec<f64> = w.targets.iter().map(|&t| ds.y[t]).collect();
    let forest = fit_quantile_forest(
        &w.rows,
        &y,
        &ForestConfig {
            seed: 8,
            ..ForestConfig::default()
        },
    )
    .unwrap();
    for tau in [0.9, 0.95] {
        let q = forest.oob_quantiles(tau).unwrap();
        let covered = y.iter().zip(&q).filter(|(v, q)| v <= q).count() as f64 / y.len() as f64;
        assert!((covered - tau).abs() <= 0.03, "tau {tau}: coverage {covered}");
    }
}
