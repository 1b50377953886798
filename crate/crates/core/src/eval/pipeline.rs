//! End-to-end fitting of the two methods on a windowed series.

use serde::{Deserialize, Serialize};

use super::{frechet_transform, make_windows, select_threshold, Alignment, WindowSet};
use crate::angular::{AngularPoint, AngularWeights};
use crate::baseline::{fit_quantile_forest, ForestConfig, QuantileForest};
use crate::error::{ExqError, Result};
use crate::mcmc::{regression_line_from_draws, run_chain, McmcConfig, PosteriorChain};
use crate::network::{extract_exceedances, train, EqrnConfig, EqrnModel};
use crate::scenario::{SeriesDataset, SplitLabel};
use crate::special::quantile_sorted;

/// Grid size for the posterior-mean regression line.
pub const LINE_GRID: usize = 200;

/// Elementwise map applied to windows before they reach the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateTransform {
    Identity,
    /// Natural log; for positive, heavy-tailed covariates.
    Log,
}

impl CovariateTransform {
    pub fn apply(&self, row: &[f64]) -> Result<Vec<f64>> {
        match self {
            CovariateTransform::Identity => Ok(row.to_vec()),
            CovariateTransform::Log => row
                .iter()
                .map(|&v| {
                    if v > 0.0 {
                        Ok(v.ln())
                    } else {
                        Err(ExqError::Domain(format!(
                            "log covariate transform needs positive values (got {v})"
                        )))
                    }
                })
                .collect(),
        }
    }

    /// Inverse of [`apply`](Self::apply) for a single value.
    pub fn invert(&self, v: f64) -> f64 {
        match self {
            CovariateTransform::Identity => v,
            CovariateTransform::Log => v.exp(),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(CovariateTransform::Identity),
            "log" => Ok(CovariateTransform::Log),
            other => Err(ExqError::InvalidParameter(format!(
                "unknown covariate transform {other:?}"
            ))),
        }
    }
}

/// Scenario 1 is a lagged time series; Scenarios 2–4 pair `Y_t` with the current `X_t`.
pub fn default_alignment(scenario: u32) -> Alignment {
    if scenario == 1 {
        Alignment::Lagged
    } else {
        Alignment::Contemporaneous
    }
}

/// Unit-Fréchet scenarios are fitted on the log scale, both covariates and response.
pub fn default_transform(scenario: u32) -> CovariateTransform {
    if scenario == 1 {
        CovariateTransform::Identity
    } else {
        CovariateTransform::Log
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EqrnPipelineConfig {
    pub alignment: Alignment,
    pub transform: CovariateTransform,
    /// Monotone map of the response; quantiles are fitted on this scale and
    /// mapped back.
    pub response: CovariateTransform,
    pub forest: ForestConfig,
    pub eqrn: EqrnConfig,
}

impl Default for EqrnPipelineConfig {
    fn default() -> Self {
        Self {
            alignment: Alignment::Lagged,
            transform: CovariateTransform::Identity,
            response: CovariateTransform::Identity,
            forest: ForestConfig::default(),
            eqrn: EqrnConfig::default(),
        }
    }
}

/// Intermediate-quantile forest plus the tail network fitted on its exceedances.
#[derive(Debug, Clone)]
pub struct EqrnFit {
    pub forest: QuantileForest,
    pub model: EqrnModel,
    pub alignment: Alignment,
    pub transform: CovariateTransform,
    pub response: CovariateTransform,
    pub train_exceedances: usize,
    pub valid_exceedances: usize,
}

fn rows_at(w: &WindowSet, pos: &[usize]) -> Vec<Vec<f64>> {
    pos.iter().map(|&k| w.rows[k].clone()).collect()
}

fn targets_at(ds: &SeriesDataset, w: &WindowSet, pos: &[usize], response: CovariateTransform) -> Result<Vec<f64>> {
    let y: Vec<f64> = pos.iter().map(|&k| ds.y[w.targets[k]]).collect();
    response.apply(&y)
}

/// Out-of-bag forest quantiles for one split, then its exceedances.
fn split_exceedances(
    ds: &SeriesDataset,
    w: &WindowSet,
    label: SplitLabel,
    cfg: &EqrnPipelineConfig,
    forest_cfg: &ForestConfig,
) -> Result<(QuantileForest, crate::network::ExceedanceSet)> {
    let pos = w.positions(ds, label);
    let rows = rows_at(w, &pos);
    let y = targets_at(ds, w, &pos, cfg.response)?;
    let forest = fit_quantile_forest(&rows, &y, forest_cfg)?;
    let q0 = forest.oob_quantiles(cfg.eqrn.tau0)?;
    let net_rows = rows
        .iter()
        .map(|r| cfg.transform.apply(r))
        .collect::<Result<Vec<_>>>()?;
    let set = extract_exceedances(&y, &q0, &net_rows)?;
    Ok((forest, set))
}

/// Fits the training and validation forests, extracts out-of-bag
/// exceedances in each split and trains the network on them.
pub fn fit_eqrn(ds: &SeriesDataset, cfg: &EqrnPipelineConfig) -> Result<EqrnFit> {
    cfg.eqrn.validate()?;
    let w = make_windows(ds, cfg.eqrn.window, cfg.alignment)?;
    let (forest, train_set) = split_exceedances(ds, &w, SplitLabel::Train, cfg, &cfg.forest)?;
    let valid_forest = ForestConfig {
        seed: cfg.forest.seed.wrapping_add(1),
        ..cfg.forest.clone()
    };
    let (_, valid_set) = split_exceedances(ds, &w, SplitLabel::Valid, cfg, &valid_forest)?;
    let model = train(&train_set, &valid_set, w.features, &cfg.eqrn)?;
    Ok(EqrnFit {
        forest,
        model,
        alignment: cfg.alignment,
        transform: cfg.transform,
        response: cfg.response,
        train_exceedances: train_set.len(),
        valid_exceedances: valid_set.len(),
    })
}

impl EqrnFit {
    /// Forest estimates of the intermediate quantile at raw windows, on the
    /// fitting scale of the response.
    pub fn intermediate(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.forest.predict(rows, self.model.tau0)
    }

    /// Extrapolated `tau`-quantiles at raw windows, on the raw response scale.
    pub fn predict(&self, rows: &[Vec<f64>], tau: f64) -> Result<Vec<f64>> {
        let q0 = self.intermediate(rows)?;
        rows.iter()
            .zip(q0)
            .map(|(r, q)| {
                let fitted = self.model.predict_extreme_quantile(&self.transform.apply(r)?, q, tau)?;
                Ok(self.response.invert(fitted))
            })
            .collect()
    }

    /// Fitted shape parameter at each raw window.
    pub fn shape(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        rows.iter()
            .map(|r| Ok(self.model.forward(&self.transform.apply(r)?)?.xi))
            .collect()
    }
}

/// How raw covariates and responses reach unit-Fréchet scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Margins {
    /// Data already on unit-Fréchet margins.
    UnitFrechet,
    /// Empirical margins from the fitting sample (sorted).
    Empirical { x: Vec<f64>, y: Vec<f64> },
}

impl Margins {
    fn x_to_frechet(&self, x: f64) -> Result<f64> {
        match self {
            Margins::UnitFrechet => {
                if x > 0.0 {
                    Ok(x)
                } else {
                    Err(ExqError::Domain(format!(
                        "unit-Fréchet covariate must be positive (got {x})"
                    )))
                }
            }
            Margins::Empirical { x: sorted, .. } => {
                let n = sorted.len();
                let below = sorted.partition_point(|&v| v <= x).clamp(1, n);
                Ok(-1.0 / (below as f64 / (n + 1) as f64).ln())
            }
        }
    }

    fn y_from_frechet(&self, yhat: f64) -> f64 {
        match self {
            Margins::UnitFrechet => yhat,
            Margins::Empirical { y, .. } => quantile_sorted(y, (-1.0 / yhat).exp()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BernsteinConfig {
    pub mcmc: McmcConfig,
    /// Quantile level of `x̂ + ŷ` above which pseudo-angles are kept.
    pub threshold_level: f64,
    /// Rank-transform the margins instead of treating the data as unit Fréchet.
    pub empirical_margins: bool,
}

impl Default for BernsteinConfig {
    fn default() -> Self {
        Self {
            mcmc: McmcConfig::default(),
            threshold_level: 0.98,
            empirical_margins: true,
        }
    }
}

/// Thinned posterior draws with the margins needed to predict on raw scale.
#[derive(Debug, Clone, PartialEq)]
pub struct BernsteinFit {
    pub draws: Vec<AngularWeights>,
    pub margins: Margins,
    pub threshold: f64,
    pub n_angles: usize,
}

/// Thresholds `x̂ + ŷ`, samples the angular posterior from the retained
/// pseudo-angles and keeps the thinned draws.
pub fn fit_bernstein(x: &[f64], y: &[f64], cfg: &BernsteinConfig) -> Result<(BernsteinFit, PosteriorChain)> {
    if x.len() != y.len() {
        return Err(ExqError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.is_empty() {
        return Err(ExqError::EmptySample("Bernstein fitting pairs"));
    }
    let (margins, xhat, yhat) = if cfg.empirical_margins {
        let mut xs = x.to_vec();
        let mut ys = y.to_vec();
        xs.sort_by(f64::total_cmp);
        ys.sort_by(f64::total_cmp);
        (
            Margins::Empirical { x: xs, y: ys },
            frechet_transform(x),
            frechet_transform(y),
        )
    } else {
        if let Some(v) = x.iter().chain(y).find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(ExqError::Domain(format!(
                "unit-Fréchet data must be positive and finite (got {v})"
            )));
        }
        (Margins::UnitFrechet, x.to_vec(), y.to_vec())
    };
    let (threshold, kept) = select_threshold(&xhat, &yhat, cfg.threshold_level)?;
    let angles = kept
        .iter()
        .map(|&i| AngularPoint::new(xhat[i] / (xhat[i] + yhat[i])))
        .collect::<Result<Vec<_>>>()?;
    let chain = run_chain(&angles, &cfg.mcmc)?;
    let draws = chain.thinned().cloned().collect();
    Ok((
        BernsteinFit {
            draws,
            margins,
            threshold,
            n_angles: angles.len(),
        },
        chain,
    ))
}

impl BernsteinFit {
    /// Posterior-mean `tau`-quantile of `Y` given raw covariate `x`, on raw scale.
    ///
    /// The line is evaluated on a log-spaced grid spanning the queried
    /// Fréchet covariates and interpolated linearly in `(ln x̂, ln ŷ)`.
    pub fn predict(&self, x: &[f64], tau: f64) -> Result<Vec<f64>> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(ExqError::Domain(format!("tau must lie in (0, 1) (got {tau})")));
        }
        if x.is_empty() {
            return Ok(vec![]);
        }
        let xhat = x
            .iter()
            .map(|&v| self.margins.x_to_frechet(v))
            .collect::<Result<Vec<_>>>()?;
        let lo = xhat.iter().copied().fold(f64::INFINITY, f64::min).ln();
        let hi = xhat.iter().copied().fold(f64::NEG_INFINITY, f64::max).ln();
        let k = if hi > lo { LINE_GRID } else { 1 };
        let grid: Vec<f64> = (0..k)
            .map(|i| {
                if k == 1 {
                    lo.exp()
                } else {
                    (lo + (hi - lo) * i as f64 / (k - 1) as f64).exp()
                }
            })
            .collect();
        let refs: Vec<&AngularWeights> = self.draws.iter().collect();
        let line = regression_line_from_draws(&refs, tau, &grid)?;
        let log_y: Vec<f64> = line.iter().map(|p| p.mean.ln()).collect();
        Ok(xhat
            .iter()
            .map(|&v| {
                let yhat = if k == 1 {
                    log_y[0].exp()
                } else {
                    let pos = ((v.ln() - lo) / (hi - lo) * (k - 1) as f64).clamp(0.0, (k - 1) as f64);
                    let i = (pos.floor() as usize).min(k - 2);
                    let f = pos - i as f64;
                    ((1.0 - f) * log_y[i] + f * log_y[i + 1]).exp()
                };
                self.margins.y_from_frechet(yhat)
            })
            .collect())
    }
}
