//! Station-level fire records (`year, station, max_temp_c, fires`) aggregated
//! into a yearly series.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use serde::Deserialize;

use crate::error::{ExqError, Result};
use crate::scenario::{SeriesDataset, SplitRanges};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FireRecord {
    pub year: i32,
    pub station: String,
    pub max_temp_c: f64,
    pub fires: f64,
}

pub fn read_fires_csv<R: Read>(input: R) -> Result<Vec<FireRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        let r: FireRecord = rec?;
        if !r.max_temp_c.is_finite() || !(r.fires >= 0.0 && r.fires.is_finite()) {
            return Err(ExqError::Format(format!(
                "year {} station {:?}: temperature must be finite and fires nonnegative",
                r.year, r.station
            )));
        }
        out.push(r);
    }
    if out.is_empty() {
        return Err(ExqError::EmptySample("fire records"));
    }
    Ok(out)
}

/// Yearly series with the years it covers.
#[derive(Debug, Clone, PartialEq)]
pub struct YearlySeries {
    pub years: Vec<i32>,
    pub stations: Vec<String>,
    pub dataset: SeriesDataset,
}

/// One row per year: `x` is the hottest station maximum, `y` the total fire
/// count, and `extra` every station's maximum in sorted station order.
///
/// `train_until` and `valid_until` are the last years of the training and
/// validation splits; without them the split is 60/20/20 by year.
pub fn aggregate_by_year(
    records: &[FireRecord],
    train_until: Option<i32>,
    valid_until: Option<i32>,
) -> Result<YearlySeries> {
    let stations: Vec<String> = records
        .iter()
        .map(|r| r.station.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut by_year: BTreeMap<i32, BTreeMap<&str, &FireRecord>> = BTreeMap::new();
    for r in records {
        if by_year.entry(r.year).or_default().insert(&r.station, r).is_some() {
            return Err(ExqError::Format(format!(
                "duplicate record for year {} station {:?}",
                r.year, r.station
            )));
        }
    }
    let mut years = Vec::new();
    let (mut x, mut y, mut extra) = (Vec::new(), Vec::new(), Vec::new());
    for (year, rows) in &by_year {
        if rows.len() != stations.len() {
            let missing: Vec<&str> = stations
                .iter()
                .map(String::as_str)
                .filter(|s| !rows.contains_key(s))
                .collect();
            return Err(ExqError::Format(format!("year {year} lacks stations {missing:?}")));
        }
        let temps: Vec<f64> = rows.values().map(|r| r.max_temp_c).collect();
        years.push(*year);
        x.push(temps.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        y.push(rows.values().map(|r| r.fires).sum());
        extra.push(temps);
    }
    let n = years.len();
    let split = match (train_until, valid_until) {
        (None, None) => SplitRanges::proportional(n, 0.6, 0.2)?,
        (Some(a), Some(b)) if a <= b => {
            let train_end = years.partition_point(|&yr| yr <= a);
            let valid_end = years.partition_point(|&yr| yr <= b);
            SplitRanges {
                train: 0..train_end,
                valid: train_end..valid_end,
                test: valid_end..n,
            }
        }
        _ => {
            return Err(ExqError::InvalidParameter(
                "give both split years with train_until <= valid_until, or neither".into(),
            ))
        }
    };
    let mut dataset = SeriesDataset::new(x, y, split, 0)?;
    dataset.extra = Some(extra);
    dataset.validate()?;
    Ok(YearlySeries {
        years,
        stations,
        dataset,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "year,station,max_temp_c,fires\n\
        2012,B,40.5,3\n2011,A,38.0,1\n2011,B,41.0,4\n2012,A,39.0,2\n2013,A,37.5,0\n2013,B,36.0,1\n";

    #[test]
    fn aggregates_in_year_and_station_order() {
        let recs = read_fires_csv(SAMPLE.as_bytes()).unwrap();
        let s = aggregate_by_year(&recs, Some(2011), Some(2012)).unwrap();
        assert_eq!(s.years, vec![2011, 2012, 2013]);
        assert_eq!(s.stations, vec!["A", "B"]);
        assert_eq!(s.dataset.x, vec![41.0, 40.5, 37.5]);
        assert_eq!(s.dataset.y, vec![5.0, 5.0, 1.0]);
        assert_eq!(s.dataset.extra.as_ref().unwrap()[1], vec![39.0, 40.5]);
        assert_eq!(s.dataset.split.train, 0..1);
        assert_eq!(s.dataset.split.valid, 1..2);
        assert_eq!(s.dataset.split.test, 2..3);
    }

    #[test]
    fn malformed_inputs_fail() {
        let missing = "year,station,max_temp_c,fires\n2011,A,38,1\n2011,B,39,1\n2012,A,40,2\n";
        let recs = read_fires_csv(missing.as_bytes()).unwrap();
        assert!(matches!(aggregate_by_year(&recs, None, None), Err(ExqError::Format(_))));
        let dup = "year,station,max_temp_c,fires\n2011,A,38,1\n2011,A,39,1\n";
        let recs = read_fires_csv(dup.as_bytes()).unwrap();
        assert!(aggregate_by_year(&recs, None, None).is_err());
        assert!(read_fires_csv("year,station,max_temp_c,fires\n2011,A,38,-1\n".as_bytes()).is_err());
        assert!(read_fires_csv("year,station,temp\n2011,A,38\n".as_bytes()).is_err());
        let recs = read_fires_csv(SAMPLE.as_bytes()).unwrap();
        assert!(aggregate_by_year(&recs, Some(2012), None).is_err());
    }
}
