//! Marginal transforms, threshold selection, error metrics, covariate
//! windows and the benchmark harness.

mod benchmark;
mod pipeline;

use serde::{Deserialize, Serialize};

use crate::error::{ExqError, Result};
use crate::scenario::{SeriesDataset, SplitLabel};
use crate::special::quantile_sorted;

pub use benchmark::{
    derive_seed, run_benchmark, write_metrics_csv, write_plot_csv, BenchmarkConfig, BenchmarkOutcome, Method,
    MetricReport, PlotRow,
};
pub use pipeline::{
    default_alignment, default_transform, fit_bernstein, fit_eqrn, BernsteinConfig, BernsteinFit, CovariateTransform,
    EqrnFit, EqrnPipelineConfig, Margins, LINE_GRID,
};

/// Empirical unit-Fréchet scores `−1/ln(r_i/(n+1))` from average ranks.
pub fn frechet_transform(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // positions i..=j share rank (i+1 + j+1)/2
        let r = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    let denom = (n + 1) as f64;
    ranks.iter().map(|r| -1.0 / (r / denom).ln()).collect()
}

/// Level-quantile `u` of `x̂ + ŷ` (type 7) and the indices with `x̂ + ŷ > u`.
/// `level = 0` keeps every point.
pub fn select_threshold(xhat: &[f64], yhat: &[f64], level: f64) -> Result<(f64, Vec<usize>)> {
    if xhat.len() != yhat.len() {
        return Err(ExqError::LengthMismatch {
            left: xhat.len(),
            right: yhat.len(),
        });
    }
    if xhat.is_empty() {
        return Err(ExqError::EmptySample("threshold sample"));
    }
    if !(0.0..1.0).contains(&level) {
        if level >= 1.0 {
            return Err(ExqError::NoExceedances);
        }
        return Err(ExqError::Domain(format!("level must lie in [0, 1) (got {level})")));
    }
    let sums: Vec<f64> = xhat.iter().zip(yhat).map(|(x, y)| x + y).collect();
    let mut sorted = sums.clone();
    sorted.sort_by(f64::total_cmp);
    let u = quantile_sorted(&sorted, level);
    let kept: Vec<usize> = if level == 0.0 {
        (0..sums.len()).collect()
    } else {
        (0..sums.len()).filter(|&i| sums[i] > u).collect()
    };
    if kept.is_empty() {
        return Err(ExqError::NoExceedances);
    }
    Ok((u, kept))
}

fn check_pair(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(ExqError::LengthMismatch {
            left: pred.len(),
            right: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(ExqError::EmptySample("predictions"));
    }
    Ok(())
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    let ss: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum();
    Ok((ss / pred.len() as f64).sqrt())
}

pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    let s: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum();
    Ok(s / pred.len() as f64)
}

/// How a window lines up with its target time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alignment {
    /// Steps `j = t−s..t−1`, each `(x_j, y_j, extra_j)`.
    Lagged,
    /// Steps `j = t−s+1..t`, each `(x_j, y_{j−1}, extra_j)`: the current
    /// covariate is known, the response only up to `t−1`.
    Contemporaneous,
}

impl Alignment {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "lagged" => Ok(Alignment::Lagged),
            "contemporaneous" => Ok(Alignment::Contemporaneous),
            other => Err(ExqError::InvalidParameter(format!("unknown alignment {other:?}"))),
        }
    }
}

/// Flattened covariate windows, one per target time.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet {
    pub targets: Vec<usize>,
    /// Time-major rows of `window · features` values.
    pub rows: Vec<Vec<f64>>,
    pub window: usize,
    pub features: usize,
}

impl WindowSet {
    /// Positions (into `targets`) whose target time carries `label`.
    pub fn positions(&self, ds: &SeriesDataset, label: SplitLabel) -> Vec<usize> {
        (0..self.targets.len())
            .filter(|&k| ds.split.label(self.targets[k]) == label)
            .collect()
    }

    /// The covariate `x` of the most recent step in window `k`.
    pub fn last_x(&self, k: usize) -> f64 {
        self.rows[k][(self.window - 1) * self.features]
    }
}

/// Builds the `N − s` windows of width `s`; targets are `s..N`.
pub fn make_windows(ds: &SeriesDataset, s: usize, alignment: Alignment) -> Result<WindowSet> {
    ds.validate()?;
    if s == 0 {
        return Err(ExqError::InvalidParameter("window length must be positive".into()));
    }
    let n = ds.len();
    if n <= s {
        return Err(ExqError::InsufficientData { needed: s + 1, got: n });
    }
    let features = 2 + ds.extra_width();
    let mut rows = Vec::with_capacity(n - s);
    for t in s..n {
        let mut row = Vec::with_capacity(s * features);
        let steps = match alignment {
            Alignment::Lagged => t - s..t,
            Alignment::Contemporaneous => t + 1 - s..t + 1,
        };
        for j in steps {
            let yj = match alignment {
                Alignment::Lagged => ds.y[j],
                Alignment::Contemporaneous => ds.y[j - 1],
            };
            row.push(ds.x[j]);
            row.push(yj);
            if let Some(extra) = &ds.extra {
                row.extend_from_slice(&extra[j]);
            }
        }
        rows.push(row);
    }
    Ok(WindowSet {
        targets: (s..n).collect(),
        rows,
        window: s,
        features,
    })
}
