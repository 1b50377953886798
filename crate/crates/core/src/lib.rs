//! Extreme conditional quantile regression.
//!
//! Two families of estimators for high conditional quantiles:
//!
//! - Bayesian regression manifolds induced by a Bernstein-polynomial angular
//!   density on unit-Fréchet margins ([`angular`], [`mcmc`]), with the
//!   parametric families of [`bev`] as ground truth.
//! - A generalized-Pareto tail network ([`network`]) that extrapolates above
//!   intermediate quantiles from a quantile regression forest ([`baseline`]).
//!
//! [`scenario`] simulates the benchmark data sets and [`eval`] scores the
//! methods against each other.

// `!(a > b)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod roots;
pub mod special;

pub mod angular;
pub mod baseline;
pub mod bev;
pub mod eval;
pub mod fires;
pub mod gpd;
pub mod mcmc;
pub mod network;
pub mod scenario;

pub use error::{ExqError, Result};
