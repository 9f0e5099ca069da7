//! Post-double-selection inference on a treatment effect with many controls.
//!
//! The library covers the feasible weighted Lasso used for selection, the
//! post-double-selection estimator and its comparators, a split-sample
//! variant, efficient-moment ATE/ATT estimators for binary treatments, the
//! Monte Carlo designs and a replication harness.

pub mod cli;
pub mod data;
pub mod dgp;
pub mod error;
pub mod hte;
pub mod lasso;
pub mod logistic;
pub mod montecarlo;
pub mod regression;
pub mod selection;
pub mod split;
pub mod stats;

pub use error::{Error, Result};
pub use lasso::{feasible_loadings, lasso_cd, PenaltyConfig};
pub use regression::{Dataset, EstimateReport, Truth};
pub use selection::{double_selection, EstimatorOptions};
