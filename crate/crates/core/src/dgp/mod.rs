//! Synthetic data-generating processes.
//!
//! Two families are supported. `Example1` draws covariates from a two-component
//! normal mixture (identity and AR(1)-Toeplitz covariance), assigns treatment
//! through a logistic index, and produces outcomes with a logarithmic
//! confounding term and a unit additive effect. `Example2` is a sparse
//! high-dimensional design: independent standard-normal covariates, 2-sparse
//! linear outcome models per arm, and a 2-sparse logistic propensity.
//!
//! Generation is fully deterministic given `(spec, n, seed)`; datasets carry
//! both potential outcomes so tests and the Monte Carlo harness can measure
//! error against the true effect.

mod generate;
mod io;
mod sample;
mod spec;

pub use generate::{oracle_nuisances, true_ate, true_ate_monte_carlo, Dataset, OverlapStats};
pub use io::{
    read_dataset_csv, read_metadata, sidecar_path, write_dataset_csv, write_metadata,
    DatasetMetadata,
};
pub use sample::{
    covariance_matrix, sample_covariates, sample_covariates_labeled, sample_mvn, toeplitz_ar1,
    MixtureSampler,
};
pub use spec::{
    CovarianceKind, CovariateSpec, DgpKind, DgpSpec, MixtureComponent, OutcomeParams,
    PropensityForm, PropensityParams,
};
