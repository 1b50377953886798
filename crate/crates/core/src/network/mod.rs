//! Extreme quantile regression network: a feedforward or LSTM map from a
//! covariate window to orthogonal GPD parameters, trained on exceedances of
//! an intermediate quantile.

mod checkpoint;
mod net;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ExqError, Result};
use crate::gpd::{extrapolate_quantile, ogpd_loss, ogpd_loss_grad, OrthoGpdParams};

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_FORMAT};
pub use net::{output_maps, Architecture, NetworkShape, NU_FLOOR, XI_MAX, XI_MIN};

use net::{inverse_nu_map, Net};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
/// Initial shape implied by a zero output pre-activation.
const XI_INIT: f64 = 0.5 * (XI_MIN + XI_MAX);

/// Exceedances of the response over its intermediate conditional quantile.
#[derive(Debug, Clone, PartialEq)]
pub struct ExceedanceSet {
    pub indices: Vec<usize>,
    pub z: Vec<f64>,
    /// Flattened covariate windows, time-major.
    pub windows: Vec<Vec<f64>>,
}

impl ExceedanceSet {
    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }
}

/// Keeps the rows with `y_i > q0hat_i`.
pub fn extract_exceedances(y: &[f64], q0hat: &[f64], windows: &[Vec<f64>]) -> Result<ExceedanceSet> {
    if y.len() != q0hat.len() {
        return Err(ExqError::LengthMismatch {
            left: y.len(),
            right: q0hat.len(),
        });
    }
    if y.len() != windows.len() {
        return Err(ExqError::LengthMismatch {
            left: y.len(),
            right: windows.len(),
        });
    }
    let mut set = ExceedanceSet {
        indices: vec![],
        z: vec![],
        windows: vec![],
    };
    for (i, (&yi, &qi)) in y.iter().zip(q0hat).enumerate() {
        if yi > qi {
            set.indices.push(i);
            set.z.push(yi - qi);
            set.windows.push(windows[i].clone());
        }
    }
    if set.is_empty() {
        return Err(ExqError::NoExceedances);
    }
    Ok(set)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EqrnConfig {
    pub architecture: Architecture,
    pub window: usize,
    pub state_dim: usize,
    /// Hidden layer sizes; `None` picks `[]` for the recurrent and `[32]` for
    /// the feedforward architecture.
    pub dense_layers: Option<Vec<usize>>,
    pub l2_lambda: f64,
    pub tau0: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for EqrnConfig {
    fn default() -> Self {
        EqrnConfig {
            architecture: Architecture::Recurrent,
            window: 10,
            state_dim: 64,
            dense_layers: None,
            l2_lambda: 1e-4,
            tau0: 0.9,
            learning_rate: 1e-3,
            batch_size: 256,
            max_epochs: 500,
            patience: 20,
            seed: 0,
        }
    }
}

impl EqrnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau0 > 0.0 && self.tau0 < 1.0) {
            return Err(ExqError::InvalidParameter(format!(
                "tau0 must lie in (0, 1) (got {})",
                self.tau0
            )));
        }
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return Err(ExqError::InvalidParameter("l2_lambda must be nonnegative".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ExqError::InvalidParameter("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 || self.window == 0 {
            return Err(ExqError::InvalidParameter(
                "batch_size and window must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn shape(&self, features: usize) -> NetworkShape {
        let dense_layers = self.dense_layers.clone().unwrap_or_else(|| match self.architecture {
            Architecture::Recurrent => vec![],
            Architecture::Feedforward => vec![32],
        });
        NetworkShape {
            architecture: self.architecture,
            window: self.window,
            features,
            state_dim: self.state_dim,
            dense_layers,
        }
    }
}

/// Per-feature affine standardization shared by every time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(features: usize) -> Self {
        Standardizer {
            mean: vec![0.0; features],
            std: vec![1.0; features],
        }
    }

    /// Statistics over every step of every window; constant features keep unit scale.
    pub fn fit(windows: &[Vec<f64>], features: usize) -> Self {
        let mut sum = vec![0.0; features];
        let mut sq = vec![0.0; features];
        let mut count = 0usize;
        for w in windows {
            for step in w.chunks_exact(features) {
                for k in 0..features {
                    sum[k] += step[k];
                }
                count += 1;
            }
        }
        let n = count.max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        for w in windows {
            for step in w.chunks_exact(features) {
                for k in 0..features {
                    sq[k] += (step[k] - mean[k]).powi(2);
                }
            }
        }
        let std = sq
            .iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 && sd.is_finite() {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, std }
    }

    pub fn apply(&self, window: &[f64]) -> Vec<f64> {
        let f = self.mean.len();
        window
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.mean[i % f]) / self.std[i % f])
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean penalized training objective over the epoch's batches (NaN at epoch 0).
    pub train_loss: f64,
    /// Mean deviance over in-support validation points.
    pub valid_loss: f64,
    pub valid_out_of_support: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EqrnModel {
    pub shape: NetworkShape,
    pub weights: Vec<f64>,
    pub l2_lambda: f64,
    pub tau0: f64,
    pub standardizer: Standardizer,
    pub training_log: Vec<EpochLog>,
    /// Epoch whose weights were restored.
    pub best_epoch: usize,
}

impl EqrnModel {
    /// Untrained model with the given weights and identity standardization.
    pub fn from_weights(shape: NetworkShape, weights: Vec<f64>, tau0: f64) -> Result<Self> {
        shape.validate()?;
        if weights.len() != shape.n_params() {
            return Err(ExqError::ShapeMismatch {
                expected: shape.n_params(),
                got: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(ExqError::InvalidParameter("weights must be finite".into()));
        }
        let standardizer = Standardizer::identity(shape.features);
        Ok(EqrnModel {
            shape,
            weights,
            l2_lambda: 0.0,
            tau0,
            standardizer,
            training_log: vec![],
            best_epoch: 0,
        })
    }

    /// Glorot-uniform weights, zero biases except a unit LSTM forget bias.
    pub fn initialized(shape: NetworkShape, tau0: f64, seed: u64) -> Result<Self> {
        shape.validate()?;
        let layout = shape.layout();
        let mut w = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut glorot = |block: &mut [f64], fan_in: usize, fan_out: usize| {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in block {
                *v = rng.random_range(-a..a);
            }
        };
        if let Some(l) = layout.lstm {
            let h = shape.state_dim;
            glorot(&mut w[l.w_ih..l.w_ih + 4 * h * shape.features], shape.features, 4 * h);
            glorot(&mut w[l.w_hh..l.w_hh + 4 * h * h], h, 4 * h);
            w[l.b + h..l.b + 2 * h].fill(1.0);
        }
        for d in &layout.dense {
            glorot(&mut w[d.w..d.w + d.inputs * d.outputs], d.inputs, d.outputs);
        }
        Self::from_weights(shape, w, tau0)
    }

    fn net(&self) -> (net::Layout, &[f64]) {
        (self.shape.layout(), &self.weights)
    }

    fn check_window(&self, window: &[f64]) -> Result<()> {
        if window.len() != self.shape.input_len() {
            return Err(ExqError::ShapeMismatch {
                expected: self.shape.input_len(),
                got: window.len(),
            });
        }
        if window.iter().any(|v| !v.is_finite()) {
            return Err(ExqError::Domain("window entries must be finite".into()));
        }
        Ok(())
    }

    /// Raw (unstandardized) window to GPD parameters.
    pub fn forward(&self, window: &[f64]) -> Result<OrthoGpdParams> {
        self.check_window(window)?;
        let (layout, w) = self.net();
        let net = Net {
            shape: &self.shape,
            layout: &layout,
            w,
        };
        let x = self.standardizer.apply(window);
        let (nu, xi, _, _) = output_maps(net.forward(&x).out);
        OrthoGpdParams::new(nu, xi)
    }

    /// Penalized mean deviance of a batch and its gradient, on standardized windows.
    pub fn objective_and_gradient(&self, windows: &[Vec<f64>], z: &[f64]) -> Result<(f64, Vec<f64>)> {
        if windows.len() != z.len() {
            return Err(ExqError::LengthMismatch {
                left: windows.len(),
                right: z.len(),
            });
        }
        if z.is_empty() {
            return Err(ExqError::EmptySample("batch"));
        }
        for w in windows {
            if w.len() != self.shape.input_len() {
                return Err(ExqError::ShapeMismatch {
                    expected: self.shape.input_len(),
                    got: w.len(),
                });
            }
        }
        let (layout, w) = self.net();
        let net = Net {
            shape: &self.shape,
            layout: &layout,
            w,
        };
        let (loss, grad) = batch_objective(&net, windows, z, self.l2_lambda);
        Ok((loss, grad))
    }

    /// Extrapolated conditional quantile at level `tau > tau0`.
    pub fn predict_extreme_quantile(&self, window: &[f64], q0hat: f64, tau: f64) -> Result<f64> {
        if !(tau > self.tau0 && tau < 1.0) {
            return Err(ExqError::Domain(format!(
                "tau must lie in (tau0, 1) = ({}, 1) (got {tau})",
                self.tau0
            )));
        }
        let p = self.forward(window)?;
        extrapolate_quantile(q0hat, p, self.tau0, tau)
    }
}

/// Mean deviance over the batch plus `λ‖W‖²`; out-of-support points add
/// `+∞` to the loss and nothing to the gradient.
fn batch_objective(net: &Net, windows: &[Vec<f64>], z: &[f64], lambda: f64) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; net.w.len()];
    let mut loss = 0.0;
    let scale = 1.0 / z.len() as f64;
    for (x, &zi) in windows.iter().zip(z) {
        let cache = net.forward(x);
        let (nu, xi, d_nu, d_xi) = output_maps(cache.out);
        loss += ogpd_loss(zi, nu, xi) * scale;
        let (g_nu, g_xi) = ogpd_loss_grad(zi, nu, xi);
        let dout = [g_nu * d_nu * scale, g_xi * d_xi * scale];
        if dout[0] != 0.0 || dout[1] != 0.0 {
            net.backward(x, &cache, dout, &mut grad);
        }
    }
    if lambda > 0.0 {
        loss += lambda * net.w.iter().map(|v| v * v).sum::<f64>();
        for (g, v) in grad.iter_mut().zip(net.w) {
            *g += 2.0 * lambda * v;
        }
    }
    (loss, grad)
}

/// `(out-of-support count, mean deviance over the rest)`.
fn evaluate(net: &Net, windows: &[Vec<f64>], z: &[f64]) -> (usize, f64) {
    let mut oos = 0;
    let mut sum = 0.0;
    for (x, &zi) in windows.iter().zip(z) {
        let (nu, xi, _, _) = output_maps(net.forward(x).out);
        let l = ogpd_loss(zi, nu, xi);
        if l.is_finite() {
            sum += l;
        } else if l.is_nan() {
            return (usize::MAX, f64::NAN);
        } else {
            oos += 1;
        }
    }
    let kept = z.len() - oos;
    (oos, if kept > 0 { sum / kept as f64 } else { f64::INFINITY })
}

fn better(a: (usize, f64), b: (usize, f64)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

fn check_set(set: &ExceedanceSet, what: &'static str, input_len: usize) -> Result<()> {
    if set.is_empty() {
        return Err(ExqError::EmptySample(what));
    }
    if set.z.len() != set.windows.len() {
        return Err(ExqError::LengthMismatch {
            left: set.z.len(),
            right: set.windows.len(),
        });
    }
    if let Some(w) = set.windows.iter().find(|w| w.len() != input_len) {
        return Err(ExqError::ShapeMismatch {
            expected: input_len,
            got: w.len(),
        });
    }
    if set.z.iter().any(|&z| !(z > 0.0 && z.is_finite())) {
        return Err(ExqError::Domain(format!(
            "{what} exceedances must be positive and finite"
        )));
    }
    Ok(())
}

/// Fits the network by Adam on mini-batches with early stopping on the
/// validation deviance. Windows are raw; `features` is the per-step width.
pub fn train(
    train_set: &ExceedanceSet,
    valid_set: &ExceedanceSet,
    features: usize,
    config: &EqrnConfig,
) -> Result<EqrnModel> {
    config.validate()?;
    let shape = config.shape(features);
    shape.validate()?;
    check_set(train_set, "training exceedances", shape.input_len())?;
    check_set(valid_set, "validation exceedances", shape.input_len())?;

    let mut model = EqrnModel::initialized(shape, config.tau0, config.seed)?;
    model.l2_lambda = config.l2_lambda;
    model.standardizer = Standardizer::fit(&train_set.windows, features);
    let layout = model.shape.layout();

    // start the scale output at the moment estimate for the initial shape
    let mean_z = train_set.z.iter().sum::<f64>() / train_set.len() as f64;
    let out = layout.dense.last().expect("output layer");
    model.weights[out.b] = inverse_nu_map(mean_z * (1.0 - XI_INIT) * (1.0 + XI_INIT));

    let train_x: Vec<Vec<f64>> = train_set.windows.iter().map(|w| model.standardizer.apply(w)).collect();
    let valid_x: Vec<Vec<f64>> = valid_set.windows.iter().map(|w| model.standardizer.apply(w)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let n_params = model.weights.len();
    let (mut m, mut v) = (vec![0.0; n_params], vec![0.0; n_params]);
    let mut step = 0i32;

    let mut w = model.weights.clone();
    let initial = evaluate(
        &Net {
            shape: &model.shape,
            layout: &layout,
            w: &w,
        },
        &valid_x,
        &valid_set.z,
    );
    let mut log = vec![EpochLog {
        epoch: 0,
        train_loss: f64::NAN,
        valid_loss: initial.1,
        valid_out_of_support: initial.0,
    }];
    let mut best = (initial, w.clone(), 0usize);
    let mut since_best = 0;
    let mut nan_streak = 0;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut batch_x = Vec::with_capacity(config.batch_size);
    let mut batch_z = Vec::with_capacity(config.batch_size);

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            batch_x.clear();
            batch_z.clear();
            for &i in chunk {
                batch_x.push(train_x[i].clone());
                batch_z.push(train_set.z[i]);
            }
            let net = Net {
                shape: &model.shape,
                layout: &layout,
                w: &w,
            };
            let (loss, grad) = batch_objective(&net, &batch_x, &batch_z, config.l2_lambda);
            epoch_loss += loss;
            batches += 1;
            if grad.iter().any(|g| !g.is_finite()) {
                continue;
            }
            step += 1;
            let c1 = 1.0 - ADAM_BETA1.powi(step);
            let c2 = 1.0 - ADAM_BETA2.powi(step);
            for k in 0..n_params {
                m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * grad[k];
                v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * grad[k] * grad[k];
                w[k] -= config.learning_rate * (m[k] / c1) / ((v[k] / c2).sqrt() + ADAM_EPS);
            }
        }
        let train_loss = epoch_loss / batches as f64;
        if train_loss.is_nan() || w.iter().any(|x| !x.is_finite()) {
            nan_streak += 1;
            if nan_streak >= 2 {
                return Err(ExqError::Divergence(epoch));
            }
        } else {
            nan_streak = 0;
        }
        let score = evaluate(
            &Net {
                shape: &model.shape,
                layout: &layout,
                w: &w,
            },
            &valid_x,
            &valid_set.z,
        );
        log.push(EpochLog {
            epoch,
            train_loss,
            valid_loss: score.1,
            valid_out_of_support: score.0,
        });
        if better(score, best.0) {
            best = (score, w.clone(), epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    model.weights = best.1;
    model.best_epoch = best.2;
    model.training_log = log;
    Ok(model)
}
