//! Simulation laboratory for cross-fitted doubly-robust average-treatment-effect
//! estimation.
//!
//! The crate has five parts:
//!
//! - [`dgp`]: seeded synthetic data-generating processes with oracle access to
//!   the true nuisance functions and the true effect,
//! - [`forest`]: an honest random forest (regression and probability tasks)
//!   with cross-validated tuning,
//! - [`glm`]: exact parametric baselines (OLS and Newton/IRLS logistic),
//! - [`aipw`]: the cross-fitted AIPW estimator with influence-function
//!   confidence intervals,
//! - [`harness`]: a reproducible Monte Carlo experiment runner that measures
//!   confidence-interval coverage across sample sizes.
//!
//! Everything downstream of a 64-bit master seed is deterministic, including
//! under parallel execution; see [`seed`] for the substream derivation rule.

pub mod aipw;
pub mod dgp;
pub mod error;
pub mod forest;
pub mod glm;
pub mod harness;
mod numeric;
pub mod seed;

pub use aipw::{estimate_ate, AteEstimate, CrossFitPlan, EstimateOptions, NuisanceFit};
pub use dgp::{CovarianceKind, CovariateSpec, Dataset, DgpKind, DgpSpec};
pub use error::{Error, Result};
pub use forest::{Forest, ForestParams, ForestTask};
pub use glm::{LinearModel, LogisticModel};
pub use harness::{run_experiment, CellResult, CoverageReport, ExperimentConfig};
