//! Intermediate-quantile regressors: linear quantile regression and a
//! quantile regression forest.

pub mod forest;
pub mod linear;

pub use forest::{
    fit_quantile_forest, forest_quantile, read_forest, write_forest, ForestConfig, ForestQuery, QuantileForest,
};
pub use linear::{fit_linear_qr, pinball, LinearQrModel};
