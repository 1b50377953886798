//! Componentwise adaptive random-walk Metropolis over the free logits of a
//! Bernstein angular density.
//!
//! The sampler targets `Σ log h(w_i) + log dir(π_F, 1 − Σπ_F | c·1)` where
//! `w_i` are pseudo-angles of threshold exceedances. Proposals move one logit
//! at a time, so the target picks up the log-Jacobian of the logit map.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::angular::{free_len, resolve_weights, AngularPoint, AngularWeights};
use crate::error::{ExqError, Result};
use crate::special::{beta_pdf, quantile_sorted};

/// Regression-line summaries use every `THIN`-th stored draw.
pub const THIN: usize = 10;

/// Multiplicative step-size adaptation rate.
pub const ADAPT_RATE: f64 = 0.1;

const INITIAL_STEP: f64 = 1.0;
const CONSTRAINT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    pub chain_length: usize,
    pub burn_in: usize,
    pub target_accept: f64,
    pub adapt_interval: usize,
    pub prior_concentration: f64,
    /// Bernstein order `J`.
    pub order: u32,
    pub seed: u64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            chain_length: 10_000,
            burn_in: 4_000,
            target_accept: 0.44,
            adapt_interval: 50,
            prior_concentration: 1e-4,
            order: 8,
            seed: 0,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.chain_length {
            return Err(ExqError::InvalidParameter(format!(
                "burn_in ({}) must be below chain_length ({})",
                self.burn_in, self.chain_length
            )));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(ExqError::InvalidParameter(format!(
                "target_accept must lie in (0, 1) (got {})",
                self.target_accept
            )));
        }
        if self.adapt_interval == 0 {
            return Err(ExqError::InvalidParameter("adapt_interval must be positive".into()));
        }
        if !(self.prior_concentration > 0.0 && self.prior_concentration.is_finite()) {
            return Err(ExqError::InvalidParameter(format!(
                "prior concentration must be positive (got {})",
                self.prior_concentration
            )));
        }
        free_len(self.order)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorChain {
    /// Draws after burn-in, one per iteration.
    pub draws: Vec<AngularWeights>,
    /// Post-burn-in acceptance rate of each free component.
    pub accept_rates: Vec<f64>,
    /// Log-posterior (likelihood plus prior on the weight scale) at every iteration.
    pub log_posterior_trace: Vec<f64>,
    pub burn_in: usize,
}

/// Summary of `y_{q|x}` across thinned draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinePoint {
    pub x: f64,
    pub mean: f64,
    pub lower95: f64,
    pub upper95: f64,
}

/// Log Dirichlet(`c·1`) density of `(π_F, 1 − Σπ_F)` up to a constant;
/// `−∞` for weights that break the constraints.
pub fn log_prior(weights: &AngularWeights, c: f64) -> f64 {
    let (norm, mean) = weights.constraint_residuals();
    if norm.abs() > CONSTRAINT_TOL || mean.abs() > CONSTRAINT_TOL || weights.weights().iter().any(|&p| !(p > 0.0)) {
        return f64::NEG_INFINITY;
    }
    let free = weights.free_weights();
    let rest = 1.0 - free.iter().sum::<f64>();
    if !(rest > 0.0) {
        return f64::NEG_INFINITY;
    }
    (c - 1.0) * (free.iter().map(|p| p.ln()).sum::<f64>() + rest.ln())
}

/// `Σ log h(w_i)` over the sample.
pub fn angular_log_likelihood(angles: &[AngularPoint], weights: &AngularWeights) -> Result<f64> {
    if angles.is_empty() {
        return Err(ExqError::EmptySample("angles"));
    }
    Ok(angles.iter().map(|&w| weights.density(w).ln()).sum())
}

/// Basis densities at the sample, one column per basis function, plus the
/// unnormalized free part `E_i = Σ_F exp(π'_k − shift) B_ik` of each `h(w_i)`.
///
/// A single-logit move changes `E` along one column, so a proposal costs
/// `O(n)` instead of `O(nJ)`. `E` is rebuilt after every sweep.
struct Likelihood {
    columns: Vec<Vec<f64>>,
    free_part: Vec<f64>,
    scaled: Vec<f64>,
    scaled_sum: f64,
    shift: f64,
}

impl Likelihood {
    fn new(angles: &[AngularPoint], order: u32) -> Self {
        let j = order as f64;
        let columns = (1..order)
            .map(|k| angles.iter().map(|w| beta_pdf(w.w(), k as f64, j - k as f64)).collect())
            .collect();
        Self {
            columns,
            free_part: vec![0.0; angles.len()],
            scaled: vec![],
            scaled_sum: 0.0,
            shift: 0.0,
        }
    }

    fn rebuild(&mut self, logits: &[f64]) {
        self.shift = logits.iter().copied().fold(0.0f64, f64::max);
        self.scaled = logits.iter().map(|l| (l - self.shift).exp()).collect();
        self.scaled_sum = self.scaled.iter().sum();
        self.free_part.iter_mut().for_each(|e| *e = 0.0);
        for (col, &s) in self.columns[1..].iter().zip(&self.scaled) {
            for (e, b) in self.free_part.iter_mut().zip(col) {
                *e += s * b;
            }
        }
    }

    /// Exact `Σ log h(w_i)`.
    fn full(&self, weights: &[f64]) -> f64 {
        let mut h = vec![0.0; self.free_part.len()];
        for (col, &p) in self.columns.iter().zip(weights) {
            for (hi, b) in h.iter_mut().zip(col) {
                *hi += p * b;
            }
        }
        h.iter().map(|v| v.ln()).sum()
    }

    /// Log-likelihood after moving free component `k` to `exp(π'_k − shift) = scaled`,
    /// with pinned weights `a` and `b` taken from the resolved proposal.
    fn with_move(&self, k: usize, scaled: f64, a: f64, b: f64) -> f64 {
        let delta = scaled - self.scaled[k];
        let denom = 2.0 * (-self.shift).exp() + self.scaled_sum + delta;
        let col = &self.columns[k + 1];
        let first = &self.columns[0];
        let last = &self.columns[self.columns.len() - 1];
        let mut total = 0.0;
        for i in 0..self.free_part.len() {
            let free = (self.free_part[i] + delta * col[i]) / denom;
            total += (free + a * first[i] + b * last[i]).ln();
        }
        total
    }

    fn commit(&mut self, k: usize, scaled: f64) {
        let delta = scaled - self.scaled[k];
        for (e, b) in self.free_part.iter_mut().zip(&self.columns[k + 1]) {
            *e += delta * b;
        }
        self.scaled[k] = scaled;
        self.scaled_sum += delta;
    }
}

struct State {
    weights: AngularWeights,
    log_post: f64,
    target: f64,
}

/// Prior and sampler target for resolved weights with log-likelihood `loglik`.
fn score(weights: AngularWeights, loglik: f64, c: f64) -> Option<State> {
    let prior = log_prior(&weights, c);
    if !prior.is_finite() || !loglik.is_finite() {
        return None;
    }
    let free = weights.free_weights();
    let rest = 1.0 - free.iter().sum::<f64>();
    let log_jacobian = free.iter().map(|p| p.ln()).sum::<f64>() + rest.ln();
    let log_post = loglik + prior;
    Some(State {
        weights,
        log_post,
        target: log_post + log_jacobian,
    })
}

/// Runs one chain from the uniform density (all logits zero).
///
/// Proposals that leave the feasible region are rejected.
pub fn run_chain(angles: &[AngularPoint], config: &McmcConfig) -> Result<PosteriorChain> {
    config.validate()?;
    if angles.is_empty() {
        return Err(ExqError::EmptySample("angles"));
    }
    let order = config.order;
    let c = config.prior_concentration;
    let n_free = free_len(order)?;
    let mut lik = Likelihood::new(angles, order);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut logits = vec![0.0; n_free];
    lik.rebuild(&logits);
    let start = resolve_weights(&logits, order)?;
    let loglik = lik.full(start.weights());
    let mut state = score(start, loglik, c)
        .ok_or_else(|| ExqError::Domain("uniform starting point has zero posterior density".into()))?;
    let mut steps = vec![INITIAL_STEP; n_free];
    let mut window_accepts = vec![0usize; n_free];
    let mut post_accepts = vec![0usize; n_free];

    let n_draws = config.chain_length - config.burn_in;
    let mut draws = Vec::with_capacity(n_draws);
    let mut trace = Vec::with_capacity(config.chain_length);

    for iter in 0..config.chain_length {
        for j in 0..n_free {
            let z: f64 = rng.sample(StandardNormal);
            let u: f64 = rng.random();
            let old = logits[j];
            logits[j] = old + steps[j] * z;
            let scaled = (logits[j] - lik.shift).exp();
            let proposal = match resolve_weights(&logits, order) {
                Ok(w) if scaled.is_finite() => {
                    let m = w.basis_len();
                    let loglik = lik.with_move(j, scaled, w.weights()[0], w.weights()[m - 1]);
                    score(w, loglik, c)
                }
                _ => None,
            };
            match proposal {
                Some(prop) if u.ln() < prop.target - state.target => {
                    state = prop;
                    lik.commit(j, scaled);
                    if iter < config.burn_in {
                        window_accepts[j] += 1;
                    } else {
                        post_accepts[j] += 1;
                    }
                }
                _ => logits[j] = old,
            }
        }
        if n_free > 0 {
            lik.rebuild(&logits);
            let loglik = lik.full(state.weights.weights());
            state = score(state.weights, loglik, c)
                .ok_or_else(|| ExqError::Domain("chain reached a zero-density state".into()))?;
        }
        trace.push(state.log_post);
        if iter < config.burn_in && (iter + 1) % config.adapt_interval == 0 {
            for j in 0..n_free {
                let rate = window_accepts[j] as f64 / config.adapt_interval as f64;
                steps[j] *= (ADAPT_RATE * (rate - config.target_accept)).exp();
                window_accepts[j] = 0;
            }
        }
        if iter >= config.burn_in {
            draws.push(state.weights.clone());
        }
    }

    let accept_rates = post_accepts.iter().map(|&a| a as f64 / n_draws as f64).collect();
    Ok(PosteriorChain {
        draws,
        accept_rates,
        log_posterior_trace: trace,
        burn_in: config.burn_in,
    })
}

impl PosteriorChain {
    /// Every [`THIN`]-th stored draw, starting with the first.
    pub fn thinned(&self) -> impl Iterator<Item = &AngularWeights> {
        self.draws.iter().step_by(THIN)
    }

    /// Component-wise mean of the stored weight vectors.
    pub fn mean_weights(&self) -> Vec<f64> {
        let m = self.draws.first().map_or(0, |d| d.basis_len());
        let mut acc = vec![0.0; m];
        for d in &self.draws {
            for (a, p) in acc.iter_mut().zip(d.weights()) {
                *a += p;
            }
        }
        let n = self.draws.len().max(1) as f64;
        acc.iter().map(|a| a / n).collect()
    }
}

/// Mean and central 95% band of `y_{q|x}` over the thinned draws at each `x`.
pub fn posterior_regression_line(chain: &PosteriorChain, q: f64, x_grid: &[f64]) -> Result<Vec<LinePoint>> {
    let thinned: Vec<&AngularWeights> = chain.thinned().collect();
    regression_line_from_draws(&thinned, q, x_grid)
}

/// Mean and central 95% band of `y_{q|x}` over the given draws.
pub fn regression_line_from_draws(draws: &[&AngularWeights], q: f64, x_grid: &[f64]) -> Result<Vec<LinePoint>> {
    if draws.is_empty() {
        return Err(ExqError::EmptySample("posterior draws"));
    }
    let per_draw: Vec<Vec<f64>> = draws
        .par_iter()
        .map(|w| {
            x_grid
                .iter()
                .map(|&x| w.conditional_quantile(q, x))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(x_grid.len());
    for (i, &x) in x_grid.iter().enumerate() {
        let mut ys: Vec<f64> = per_draw.iter().map(|row| row[i]).collect();
        let mean = ys.iter().sum::<f64>() / ys.len() as f64;
        ys.sort_by(f64::total_cmp);
        let lower95 = quantile_sorted(&ys, 0.025).min(mean);
        let upper95 = quantile_sorted(&ys, 0.975).max(mean);
        out.push(LinePoint {
            x,
            mean,
            lower95,
            upper95,
        });
    }
    Ok(out)
}

/// Writes `iteration, log_posterior, w1..wm` for each stored draw.
pub fn write_chain_csv<W: Write>(chain: &PosteriorChain, out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    let m = chain.draws.first().map_or(0, |d| d.basis_len());
    let mut header = vec!["iteration".to_string(), "log_posterior".to_string()];
    header.extend((1..=m).map(|k| format!("w{k}")));
    wtr.write_record(&header)?;
    for (i, d) in chain.draws.iter().enumerate() {
        let iter = chain.burn_in + i;
        let mut row = vec![iter.to_string(), chain.log_posterior_trace[iter].to_string()];
        row.extend(d.weights().iter().map(|p| p.to_string()));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Writes `x, mean, lo, hi`.
pub fn write_line_csv<W: Write>(line: &[LinePoint], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["x", "mean", "lo", "hi"])?;
    for p in line {
        wtr.write_record([
            p.x.to_string(),
            p.mean.to_string(),
            p.lower95.to_string(),
            p.upper95.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}
