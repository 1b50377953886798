//! Simulation scenarios and their ground-truth conditional quantiles.
//!
//! Scenario 1 is a volatility-driven time series with a folded-normal
//! conditional law. Scenarios 2–4 are i.i.d. pairs from parametric bivariate
//! extreme-value models on unit-Fréchet margins.

use std::io::{Read, Write};
use std::ops::Range;

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bev::{BevModel, FrechetPoint};
use crate::error::{ExqError, Result};
use crate::special::norm_quantile;

/// Steps discarded before the first recorded Scenario 1 observation.
pub const BURN_IN: usize = 50;

/// Number of lags entering the Scenario 1 volatility.
pub const LAGS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitLabel {
    Train,
    Valid,
    Test,
}

impl SplitLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            SplitLabel::Train => "train",
            SplitLabel::Valid => "valid",
            SplitLabel::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitLabel::Train),
            "valid" => Ok(SplitLabel::Valid),
            "test" => Ok(SplitLabel::Test),
            other => Err(ExqError::Format(format!("unknown split label {other:?}"))),
        }
    }
}

/// Consecutive, disjoint time ranges covering `0..n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRanges {
    pub train: Range<usize>,
    pub valid: Range<usize>,
    pub test: Range<usize>,
}

impl SplitRanges {
    /// Splits `0..n` at `⌊train·n⌋` and `⌊(train + valid)·n⌋`.
    pub fn proportional(n: usize, train: f64, valid: f64) -> Result<Self> {
        if !(train > 0.0 && valid >= 0.0 && train + valid < 1.0) {
            return Err(ExqError::InvalidParameter(format!(
                "split fractions must satisfy 0 < train, 0 <= valid, train + valid < 1 (got {train}, {valid})"
            )));
        }
        let a = (train * n as f64).floor() as usize;
        let b = ((train + valid) * n as f64).floor() as usize;
        Ok(Self {
            train: 0..a,
            valid: a..b,
            test: b..n,
        })
    }

    /// Default 60/20/20 split.
    pub fn standard(n: usize) -> Self {
        Self::proportional(n, 0.6, 0.2).expect("constant fractions are valid")
    }

    pub fn label(&self, t: usize) -> SplitLabel {
        if t < self.train.end {
            SplitLabel::Train
        } else if t < self.valid.end {
            SplitLabel::Valid
        } else {
            SplitLabel::Test
        }
    }

    pub fn len(&self) -> usize {
        self.test.end
    }

    pub fn is_empty(&self) -> bool {
        self.test.end == 0
    }
}

/// A response series with its covariate series and time split.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesDataset {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Scenario 1 conditional scale `σ_t`.
    pub sigma_truth: Option<Vec<f64>>,
    /// Additional covariates per time step (row-major, equal widths).
    pub extra: Option<Vec<Vec<f64>>>,
    pub split: SplitRanges,
    pub seed: u64,
}

impl SeriesDataset {
    pub fn new(x: Vec<f64>, y: Vec<f64>, split: SplitRanges, seed: u64) -> Result<Self> {
        let ds = Self {
            x,
            y,
            sigma_truth: None,
            extra: None,
            split,
            seed,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Width of the extra covariate rows (0 when absent).
    pub fn extra_width(&self) -> usize {
        self.extra.as_ref().and_then(|e| e.first()).map_or(0, |r| r.len())
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.y.len();
        if self.x.len() != n {
            return Err(ExqError::LengthMismatch {
                left: self.x.len(),
                right: n,
            });
        }
        if let Some(s) = &self.sigma_truth {
            if s.len() != n {
                return Err(ExqError::LengthMismatch {
                    left: s.len(),
                    right: n,
                });
            }
        }
        if let Some(e) = &self.extra {
            if e.len() != n {
                return Err(ExqError::LengthMismatch {
                    left: e.len(),
                    right: n,
                });
            }
            let w = self.extra_width();
            if let Some(row) = e.iter().find(|r| r.len() != w) {
                return Err(ExqError::ShapeMismatch {
                    expected: w,
                    got: row.len(),
                });
            }
        }
        let sp = &self.split;
        let ordered = sp.train.start == 0
            && sp.train.end == sp.valid.start
            && sp.valid.end == sp.test.start
            && sp.test.end == n
            && sp.train.start <= sp.train.end
            && sp.valid.start <= sp.valid.end
            && sp.test.start <= sp.test.end;
        if !ordered {
            return Err(ExqError::InvalidParameter(format!(
                "split ranges {sp:?} do not tile 0..{n} in time order"
            )));
        }
        Ok(())
    }
}

/// `σ_t` from the five most recent responses and covariates (index 0 is lag 1).
pub fn scenario1_sigma(y_lags: &[f64; LAGS], x_lags: &[f64; LAGS]) -> f64 {
    const Y_COEF: [f64; LAGS] = [2.0, 1.0, 1.0, 1.0, 1.0];
    const X_COEF: [f64; LAGS] = [3.0, 2.0, 1.0, 1.0, 1.0];
    let ys: f64 = y_lags.iter().zip(Y_COEF).map(|(v, c)| c * v * v).sum();
    let xs: f64 = x_lags.iter().zip(X_COEF).map(|(v, c)| c * v * v).sum();
    (1.0 + 0.1 * ys + 0.1 * xs).sqrt()
}

/// `X_t = 0.4 X_{t−1} + |ζ^X_t|`, `Y_t = σ_t |ζ^Y_t|`, started from zeros.
///
/// The first [`BURN_IN`] steps are discarded; `σ_t` is kept as the truth.
pub fn simulate_scenario1(n: usize, seed: u64) -> Result<SeriesDataset> {
    if n < 100 {
        return Err(ExqError::InsufficientData { needed: 100, got: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x_lags = [0.0; LAGS];
    let mut y_lags = [0.0; LAGS];
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut sigma = Vec::with_capacity(n);
    for step in 0..BURN_IN + n {
        let zx: f64 = rng.sample(StandardNormal);
        let zy: f64 = rng.sample(StandardNormal);
        let s = scenario1_sigma(&y_lags, &x_lags);
        let xt = 0.4 * x_lags[0] + zx.abs();
        let yt = s * zy.abs();
        x_lags.rotate_right(1);
        x_lags[0] = xt;
        y_lags.rotate_right(1);
        y_lags[0] = yt;
        if step >= BURN_IN {
            x.push(xt);
            y.push(yt);
            sigma.push(s);
        }
    }
    let mut ds = SeriesDataset::new(x, y, SplitRanges::standard(n), seed)?;
    ds.sigma_truth = Some(sigma);
    Ok(ds)
}

/// Folded-normal quantile `σ Φ⁻¹((1 + τ)/2)`.
pub fn true_scenario1_quantile(sigma: f64, tau: f64) -> Result<f64> {
    crate::bev::check_probability(tau)?;
    Ok(sigma * norm_quantile(0.5 * (1.0 + tau)))
}

/// `n` pairs by inversion: `X = −1/log U₁`, `Y = y_{U₂|X}`.
pub fn sample_bev(model: &BevModel, n: usize, seed: u64) -> Result<Vec<FrechetPoint>> {
    let model = model.validated()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let u1: f64 = rng.sample(Open01);
        let u2: f64 = rng.sample(Open01);
        let x = -1.0 / u1.ln();
        let y = model
            .conditional_quantile(u2, x)
            .map_err(|_| ExqError::InversionFailure { x, u: u2 })?;
        out.push(FrechetPoint::new(x, y)?);
    }
    Ok(out)
}

/// Generator behind a scenario id.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioPreset {
    /// Scenario 1 time series.
    Series,
    Bev {
        model: BevModel,
    },
}

pub fn scenario_preset(id: u32) -> Result<ScenarioPreset> {
    Ok(match id {
        1 => ScenarioPreset::Series,
        2 => ScenarioPreset::Bev {
            model: BevModel::husler_reiss(0.1)?,
        },
        3 => ScenarioPreset::Bev {
            model: BevModel::logistic(0.9)?,
        },
        4 => ScenarioPreset::Bev {
            model: BevModel::coles_tawn(0.5, 100.0)?,
        },
        other => return Err(ExqError::UnknownScenario(other)),
    })
}

/// Generates the data set of scenario `id` with the standard split.
pub fn simulate(id: u32, n: usize, seed: u64) -> Result<SeriesDataset> {
    match scenario_preset(id)? {
        ScenarioPreset::Series => simulate_scenario1(n, seed),
        ScenarioPreset::Bev { model } => {
            if n == 0 {
                return Err(ExqError::InsufficientData { needed: 1, got: 0 });
            }
            let pts = sample_bev(&model, n, seed)?;
            let x = pts.iter().map(|p| p.x()).collect();
            let y = pts.iter().map(|p| p.y()).collect();
            SeriesDataset::new(x, y, SplitRanges::standard(n), seed)
        }
    }
}

/// Writes `t, x, y[, sigma_truth][, extra_1..], split`.
pub fn write_dataset_csv<W: Write>(ds: &SeriesDataset, out: W) -> Result<()> {
    ds.validate()?;
    let mut wtr = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string(), "x".into(), "y".into()];
    if ds.sigma_truth.is_some() {
        header.push("sigma_truth".into());
    }
    header.extend((1..=ds.extra_width()).map(|k| format!("extra_{k}")));
    header.push("split".into());
    wtr.write_record(&header)?;
    for t in 0..ds.len() {
        let mut row = vec![t.to_string(), ds.x[t].to_string(), ds.y[t].to_string()];
        if let Some(s) = &ds.sigma_truth {
            row.push(s[t].to_string());
        }
        if let Some(e) = &ds.extra {
            row.extend(e[t].iter().map(|v| v.to_string()));
        }
        row.push(ds.split.label(t).as_str().into());
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads a file written by [`write_dataset_csv`]; the seed is not stored and reads as 0.
pub fn read_dataset_csv<R: Read>(input: R) -> Result<SeriesDataset> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers()?.clone();
    let col = |name: &str| header.iter().position(|h| h == name);
    let need = |name: &str| col(name).ok_or_else(|| ExqError::Format(format!("missing column {name:?}")));
    let (ci_x, ci_y, ci_split) = (need("x")?, need("y")?, need("split")?);
    let ci_sigma = col("sigma_truth");
    let ci_extra: Vec<usize> = (1..).map_while(|k| col(&format!("extra_{k}"))).collect();

    let parse = |rec: &csv::StringRecord, i: usize, line: usize| -> Result<f64> {
        rec[i]
            .trim()
            .parse::<f64>()
            .map_err(|e| ExqError::Format(format!("line {line}, column {:?}: {e}", &header[i])))
    };
    let (mut x, mut y, mut sigma, mut extra, mut labels) = (vec![], vec![], vec![], vec![], vec![]);
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        x.push(parse(&rec, ci_x, line)?);
        y.push(parse(&rec, ci_y, line)?);
        if let Some(i) = ci_sigma {
            sigma.push(parse(&rec, i, line)?);
        }
        if !ci_extra.is_empty() {
            extra.push(
                ci_extra
                    .iter()
                    .map(|&i| parse(&rec, i, line))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        labels.push(SplitLabel::parse(rec[ci_split].trim())?);
    }
    let split = split_from_labels(&labels)?;
    let mut ds = SeriesDataset::new(x, y, split, 0)?;
    if ci_sigma.is_some() {
        ds.sigma_truth = Some(sigma);
    }
    if !ci_extra.is_empty() {
        ds.extra = Some(extra);
    }
    ds.validate()?;
    Ok(ds)
}

fn split_from_labels(labels: &[SplitLabel]) -> Result<SplitRanges> {
    let count = |l: SplitLabel| labels.iter().filter(|&&v| v == l).count();
    let (a, b) = (count(SplitLabel::Train), count(SplitLabel::Valid));
    let split = SplitRanges {
        train: 0..a,
        valid: a..a + b,
        test: a + b..labels.len(),
    };
    if labels.iter().enumerate().any(|(t, &l)| split.label(t) != l) {
        return Err(ExqError::Format(
            "split labels are not ordered train, valid, test".into(),
        ));
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sigma_examples() {
        assert_eq!(scenario1_sigma(&[0.0; 5], &[0.0; 5]), 1.0);
        assert_relative_eq!(scenario1_sigma(&[1.0, 0.0, 0.0, 0.0, 0.0], &[0.0; 5]).powi(2), 1.2);
        assert_relative_eq!(scenario1_sigma(&[0.0; 5], &[1.0, 0.0, 0.0, 0.0, 0.0]).powi(2), 1.3);
        assert_relative_eq!(scenario1_sigma(&[0.0; 5], &[0.0, 1.0, 0.0, 0.0, 0.0]).powi(2), 1.2);
    }

    #[test]
    fn folded_normal_quantiles() {
        // Φ⁻¹(0.95), mpmath
        assert_relative_eq!(
            true_scenario1_quantile(1.0, 0.9).unwrap(),
            1.644_853_626_951_472_8,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            true_scenario1_quantile(2.0, 0.9).unwrap(),
            3.289_707_253_902_945_6,
            epsilon = 1e-12
        );
        assert!(true_scenario1_quantile(1.0, 1e-12).unwrap() < 1e-11);
        assert!(true_scenario1_quantile(1.0, 1.0).is_err());
    }

    #[test]
    fn scenario1_is_deterministic_and_consistent() {
        let a = simulate_scenario1(500, 9).unwrap();
        let b = simulate_scenario1(500, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 500);
        assert_eq!(
            a.split,
            SplitRanges {
                train: 0..300,
                valid: 300..400,
                test: 400..500
            }
        );
        // σ_t recomputed from the recorded lags after the first five steps
        let s = a.sigma_truth.as_ref().unwrap();
        for t in 5..500 {
            let yl = [a.y[t - 1], a.y[t - 2], a.y[t - 3], a.y[t - 4], a.y[t - 5]];
            let xl = [a.x[t - 1], a.x[t - 2], a.x[t - 3], a.x[t - 4], a.x[t - 5]];
            assert_eq!(s[t], scenario1_sigma(&yl, &xl));
        }
        assert!(simulate_scenario1(99, 1).is_err());
    }

    #[test]
    fn presets() {
        assert_eq!(scenario_preset(1).unwrap(), ScenarioPreset::Series);
        assert_eq!(
            scenario_preset(2).unwrap(),
            ScenarioPreset::Bev {
                model: BevModel::HuslerReiss { lambda: 0.1 }
            }
        );
        assert_eq!(
            scenario_preset(3).unwrap(),
            ScenarioPreset::Bev {
                model: BevModel::Logistic { alpha: 0.9 }
            }
        );
        assert_eq!(
            scenario_preset(4).unwrap(),
            ScenarioPreset::Bev {
                model: BevModel::ColesTawn {
                    alpha: 0.5,
                    beta: 100.0
                }
            }
        );
        assert!(matches!(scenario_preset(9), Err(ExqError::UnknownScenario(9))));
    }

    #[test]
    fn split_helpers() {
        let s = SplitRanges::standard(10);
        assert_eq!((s.train.clone(), s.valid.clone(), s.test.clone()), (0..6, 6..8, 8..10));
        assert_eq!(s.label(5), SplitLabel::Train);
        assert_eq!(s.label(6), SplitLabel::Valid);
        assert_eq!(s.label(9), SplitLabel::Test);
        assert!(SplitRanges::proportional(10, 0.8, 0.3).is_err());
        let bad = SeriesDataset::new(vec![1.0; 3], vec![1.0; 3], SplitRanges::standard(4), 0);
        assert!(bad.is_err());
    }

    #[test]
    fn csv_round_trip() {
        let mut ds = simulate(1, 120, 4).unwrap();
        ds.extra = Some((0..120).map(|t| vec![t as f64, -0.5]).collect());
        let mut buf = Vec::new();
        write_dataset_csv(&ds, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,x,y,sigma_truth,extra_1,extra_2,split\n0,"));
        let back = read_dataset_csv(buf.as_slice()).unwrap();
        assert_eq!(back, SeriesDataset { seed: 0, ..ds });

        let bev = simulate(3, 50, 1).unwrap();
        let mut buf = Vec::new();
        write_dataset_csv(&bev, &mut buf).unwrap();
        let back = read_dataset_csv(buf.as_slice()).unwrap();
        assert_eq!(back.x, bev.x);
        assert!(back.sigma_truth.is_none());
    }

    #[test]
    fn unordered_labels_rejected() {
        let text = "t,x,y,split\n0,1,1,train\n1,1,1,test\n2,1,1,valid\n";
        assert!(matches!(read_dataset_csv(text.as_bytes()), Err(ExqError::Format(_))));
    }
}
