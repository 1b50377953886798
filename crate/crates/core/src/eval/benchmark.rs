//! Simulation benchmark: both methods on one scenario, scored against the
//! known conditional quantiles.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::pipeline::{default_alignment, default_transform, fit_bernstein, fit_eqrn};
use super::{mae, make_windows, rmse, BernsteinConfig, EqrnPipelineConfig};
use crate::baseline::ForestConfig;
use crate::error::{ExqError, Result};
use crate::mcmc::McmcConfig;
use crate::network::EqrnConfig;
use crate::scenario::{scenario_preset, simulate, true_scenario1_quantile, ScenarioPreset, SplitLabel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Eqrn,
    BernsteinMcmc,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Eqrn => "eqrn",
            Method::BernsteinMcmc => "bernstein_mcmc",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "eqrn" => Ok(Method::Eqrn),
            "bernstein_mcmc" | "bernstein" => Ok(Method::BernsteinMcmc),
            other => Err(ExqError::InvalidParameter(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub n: usize,
    /// Prediction level scored against the truth.
    pub tau: f64,
    pub tau0: f64,
    pub window: usize,
    pub methods: Vec<Method>,
    pub forest: ForestConfig,
    pub eqrn: EqrnConfig,
    pub mcmc: McmcConfig,
    pub threshold_level: f64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            n: 7000,
            tau: 0.995,
            tau0: 0.9,
            window: 10,
            methods: vec![Method::Eqrn, Method::BernsteinMcmc],
            forest: ForestConfig::default(),
            eqrn: EqrnConfig::default(),
            mcmc: McmcConfig::default(),
            threshold_level: 0.98,
        }
    }
}

/// One method's score on one scenario; `error` is set (and the metrics are
/// NaN) when the method failed.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub method: Method,
    pub scenario: u32,
    pub rmse: f64,
    pub mae: f64,
    pub tau: f64,
    pub n: usize,
    pub error: Option<String>,
}

impl MetricReport {
    pub fn score(method: Method, scenario: u32, tau: f64, pred: &[f64], truth: &[f64]) -> Result<Self> {
        Ok(MetricReport {
            method,
            scenario,
            rmse: rmse(pred, truth)?,
            mae: mae(pred, truth)?,
            tau,
            n: pred.len(),
            error: None,
        })
    }

    fn failed(method: Method, scenario: u32, tau: f64, n: usize, e: &ExqError) -> Self {
        MetricReport {
            method,
            scenario,
            rmse: f64::NAN,
            mae: f64::NAN,
            tau,
            n,
            error: Some(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotRow {
    pub t: usize,
    pub truth: f64,
    pub eqrn: Option<f64>,
    pub bernstein: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkOutcome {
    pub reports: Vec<MetricReport>,
    pub plot: Vec<PlotRow>,
    /// Fitted EQRN shape at each test window (empty if the method did not run).
    pub eqrn_shapes: Vec<f64>,
}

/// SplitMix64 step; gives each component its own stream from one master seed.
pub fn derive_seed(master: u64, tag: u64) -> u64 {
    let mut z = master.wrapping_add(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Simulates `scenario`, fits each requested method on the training and
/// validation splits and scores its test-split `tau`-quantiles.
pub fn run_benchmark(scenario: u32, cfg: &BenchmarkConfig, seed: u64) -> Result<BenchmarkOutcome> {
    let preset = scenario_preset(scenario)?;
    if !(cfg.tau > cfg.tau0 && cfg.tau < 1.0) {
        return Err(ExqError::InvalidParameter(format!(
            "benchmark tau must lie in (tau0, 1) (got tau = {}, tau0 = {})",
            cfg.tau, cfg.tau0
        )));
    }
    let tag = scenario as u64;
    let ds = simulate(scenario, cfg.n, derive_seed(seed, tag))?;
    let windows = make_windows(&ds, cfg.window, default_alignment(scenario))?;
    let test = windows.positions(&ds, SplitLabel::Test);
    if test.is_empty() {
        return Err(ExqError::EmptySample("test windows"));
    }
    let truth = test
        .iter()
        .map(|&k| {
            let t = windows.targets[k];
            match &preset {
                ScenarioPreset::Series => {
                    let sigma = ds.sigma_truth.as_ref().expect("scenario 1 records sigma")[t];
                    true_scenario1_quantile(sigma, cfg.tau)
                }
                ScenarioPreset::Bev { model } => model.conditional_quantile(cfg.tau, ds.x[t]),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let test_rows: Vec<Vec<f64>> = test.iter().map(|&k| windows.rows[k].clone()).collect();

    let mut reports = Vec::new();
    let mut eqrn_pred = None;
    let mut bern_pred = None;
    let mut eqrn_shapes = Vec::new();
    let mut methods = cfg.methods.clone();
    methods.sort();
    methods.dedup();
    for method in methods {
        let result = match method {
            Method::Eqrn => {
                let pipeline = EqrnPipelineConfig {
                    alignment: default_alignment(scenario),
                    transform: default_transform(scenario),
                    response: default_transform(scenario),
                    forest: ForestConfig {
                        seed: derive_seed(seed, 100 + tag),
                        ..cfg.forest.clone()
                    },
                    eqrn: EqrnConfig {
                        window: cfg.window,
                        tau0: cfg.tau0,
                        seed: derive_seed(seed, 200 + tag),
                        ..cfg.eqrn.clone()
                    },
                };
                fit_eqrn(&ds, &pipeline).and_then(|fit| {
                    eqrn_shapes = fit.shape(&test_rows)?;
                    fit.predict(&test_rows, cfg.tau)
                })
            }
            Method::BernsteinMcmc => {
                let fit_pos: Vec<usize> = windows
                    .positions(&ds, SplitLabel::Train)
                    .into_iter()
                    .chain(windows.positions(&ds, SplitLabel::Valid))
                    .collect();
                let x: Vec<f64> = fit_pos.iter().map(|&k| windows.last_x(k)).collect();
                let y: Vec<f64> = fit_pos.iter().map(|&k| ds.y[windows.targets[k]]).collect();
                let bcfg = BernsteinConfig {
                    mcmc: McmcConfig {
                        seed: derive_seed(seed, 300 + tag),
                        ..cfg.mcmc.clone()
                    },
                    threshold_level: cfg.threshold_level,
                    empirical_margins: matches!(preset, ScenarioPreset::Series),
                };
                let x_test: Vec<f64> = test.iter().map(|&k| windows.last_x(k)).collect();
                fit_bernstein(&x, &y, &bcfg).and_then(|(fit, _)| fit.predict(&x_test, cfg.tau))
            }
        };
        match result.and_then(|p| MetricReport::score(method, scenario, cfg.tau, &p, &truth).map(|r| (p, r))) {
            Ok((p, r)) => {
                reports.push(r);
                match method {
                    Method::Eqrn => eqrn_pred = Some(p),
                    Method::BernsteinMcmc => bern_pred = Some(p),
                }
            }
            Err(e) => reports.push(MetricReport::failed(method, scenario, cfg.tau, truth.len(), &e)),
        }
    }
    let plot = test
        .iter()
        .enumerate()
        .map(|(i, &k)| PlotRow {
            t: windows.targets[k],
            truth: truth[i],
            eqrn: eqrn_pred.as_ref().map(|p| p[i]),
            bernstein: bern_pred.as_ref().map(|p| p[i]),
        })
        .collect();
    Ok(BenchmarkOutcome {
        reports,
        plot,
        eqrn_shapes,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// `method, scenario, rmse, mae, tau, n, status`.
pub fn write_metrics_csv<W: Write>(reports: &[MetricReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "scenario", "rmse", "mae", "tau", "n", "status"])?;
    for r in reports {
        let status = r
            .error
            .as_ref()
            .map_or_else(|| "ok".to_string(), |e| format!("failed: {e}"));
        w.write_record([
            r.method.as_str().to_string(),
            r.scenario.to_string(),
            r.rmse.to_string(),
            r.mae.to_string(),
            r.tau.to_string(),
            r.n.to_string(),
            status,
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `scenario, t, truth, eqrn, bernstein_mcmc`; a method that did not run leaves its column empty.
pub fn write_plot_csv<W: Write>(rows: &[(u32, PlotRow)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["scenario", "t", "truth", "eqrn", "bernstein_mcmc"])?;
    for (s, r) in rows {
        w.write_record([
            s.to_string(),
            r.t.to_string(),
            r.truth.to_string(),
            fmt_opt(r.eqrn),
            fmt_opt(r.bernstein),
        ])?;
    }
    w.flush()?;
    Ok(())
}
