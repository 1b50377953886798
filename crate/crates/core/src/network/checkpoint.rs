//! Checkpoint format: one JSON header line, then the weights as little-endian f64.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{EpochLog, EqrnModel, NetworkShape, Standardizer};
use crate::error::{ExqError, Result};

pub const CHECKPOINT_FORMAT: &str = "exq-eqrn-v1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    shape: NetworkShape,
    tau0: f64,
    l2_lambda: f64,
    standardizer: Standardizer,
    best_epoch: usize,
    training_log: Vec<LogRow>,
    n_weights: usize,
}

/// Log entry with non-finite losses spelled out, since JSON has no NaN or infinity.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LogRow {
    epoch: usize,
    train_loss: Loss,
    valid_loss: Loss,
    valid_out_of_support: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Loss {
    Finite(f64),
    Special(String),
}

impl From<f64> for Loss {
    fn from(v: f64) -> Self {
        if v.is_finite() {
            Loss::Finite(v)
        } else {
            Loss::Special(v.to_string())
        }
    }
}

impl TryFrom<Loss> for f64 {
    type Error = ExqError;

    fn try_from(l: Loss) -> Result<f64> {
        match l {
            Loss::Finite(v) => Ok(v),
            Loss::Special(s) => match s.as_str() {
                "NaN" => Ok(f64::NAN),
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                _ => Err(ExqError::Format(format!("unrecognized loss value {s:?}"))),
            },
        }
    }
}

pub fn write_checkpoint<W: Write>(model: &EqrnModel, mut out: W) -> Result<()> {
    let header = Header {
        format: CHECKPOINT_FORMAT.to_string(),
        shape: model.shape.clone(),
        tau0: model.tau0,
        l2_lambda: model.l2_lambda,
        standardizer: model.standardizer.clone(),
        best_epoch: model.best_epoch,
        training_log: model
            .training_log
            .iter()
            .map(|e| LogRow {
                epoch: e.epoch,
                train_loss: e.train_loss.into(),
                valid_loss: e.valid_loss.into(),
                valid_out_of_support: e.valid_out_of_support,
            })
            .collect(),
        n_weights: model.weights.len(),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for w in &model.weights {
        out.write_all(&w.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: BufRead>(mut input: R) -> Result<EqrnModel> {
    let mut line = String::new();
    input.read_line(&mut line)?;
    let header: Header = serde_json::from_str(line.trim_end())?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(ExqError::Format(format!(
            "expected {CHECKPOINT_FORMAT}, found {:?}",
            header.format
        )));
    }
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() != header.n_weights * 8 {
        return Err(ExqError::Format(format!(
            "weight block holds {} bytes, expected {}",
            bytes.len(),
            header.n_weights * 8
        )));
    }
    let weights: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let features = header.shape.features;
    let mut model = EqrnModel::from_weights(header.shape, weights, header.tau0)?;
    if header.standardizer.mean.len() != features || header.standardizer.std.len() != features {
        return Err(ExqError::Format(
            "standardization width does not match the feature count".into(),
        ));
    }
    model.l2_lambda = header.l2_lambda;
    model.standardizer = header.standardizer;
    model.best_epoch = header.best_epoch;
    model.training_log = header
        .training_log
        .into_iter()
        .map(|r| {
            Ok(EpochLog {
                epoch: r.epoch,
                train_loss: r.train_loss.try_into()?,
                valid_loss: r.valid_loss.try_into()?,
                valid_out_of_support: r.valid_out_of_support,
            })
        })
        .collect::<Result<_>>()?;
    Ok(model)
}
