//! Properties of the bivariate extreme-value sampler behind Scenarios 2-4.

use exq_core::bev::BevModel;
use exq_core::scenario::{sample_bev, scenario_preset, ScenarioPreset};
use exq_core::special::norm_cdf;

fn ks_uniform(mut u: Vec<f64>) -> f64 {
    u.sort_by(f64::total_cmp);
    let n = u.len() as f64;
    u.iter()
        .enumerate()
        .map(|(i, &v)| ((i + 1) as f64 / n - v).max(v - i as f64 / n))
        .fold(0.0, f64::max)
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn logistic_one_is_independent() {
    let pts = sample_bev(&BevModel::logistic(1.0).unwrap(), 5000, 1).unwrap();
    let u: Vec<f64> = pts.iter().map(|p| (-1.0 / p.x()).exp()).collect();
    let v: Vec<f64> = pts.iter().map(|p| (-1.0 / p.y()).exp()).collect();
    assert!(pearson(&u, &v).abs() < 0.05);
}

#[test]
fn husler_reiss_extremal_coefficient() {
    let n = 5000;
    let pts = sample_bev(&BevModel::husler_reiss(0.1).unwrap(), n, 2).unwrap();
    // 1/max(X, Y) is exponential with rate θ.
    let theta = n as f64 / pts.iter().map(|p| 1.0 / p.x().max(p.y())).sum::<f64>();
    assert!((theta - 2.0 * norm_cdf(0.1)).abs() <= 0.1, "theta {theta}");
}

#[test]
fn scenario_margins_are_unit_frechet() {
    for id in 2..=4 {
        let ScenarioPreset::Bev { model } = scenario_preset(id).unwrap() else {
            panic!("scenario {id}")
        };
        let pts = sample_bev(&model, 5000, 10 + id as u64).unwrap();
        let kx = ks_uniform(pts.iter().map(|p| (-1.0 / p.x()).exp()).collect());
        let ky = ks_uniform(pts.iter().map(|p| (-1.0 / p.y()).exp()).collect());
        assert!(kx <= 0.03 && ky <= 0.03, "scenario {id}: KS {kx} {ky}");
    }
}

#[test]
fn conditional_draws_near_x_one_follow_the_conditional_cdf() {
    for (k, model) in [
        BevModel::logistic(0.5).unwrap(),
        BevModel::coles_tawn(0.5, 100.0).unwrap(),
    ]
    .iter()
    .enumerate()
    {
        let pts = sample_bev(model, 20_000, 30 + k as u64).unwrap();
        let mut ys: Vec<f64> = pts
            .iter()
            .filter(|p| (p.x() - 1.0).abs() < 0.1)
            .map(|p| p.y())
            .collect();
        ys.sort_by(f64::total_cmp);
        let n = ys.len() as f64;
        let sup = ys
            .iter()
            .enumerate()
            .map(|(i, &y)| {
                let g = model.conditional_cdf(y, 1.0).unwrap();
                ((i + 1) as f64 / n - g).abs().max((g - i as f64 / n).abs())
            })
            .fold(0.0, f64::max);
        assert!(sup <= 0.05, "{}: sup {sup} over {} draws", model.name(), ys.len());
    }
}
