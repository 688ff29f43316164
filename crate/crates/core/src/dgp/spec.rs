//! Parameterization of the synthetic processes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Covariance family for one mixture component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "tag", rename_all = "snake_case")]
pub enum CovarianceKind {
    Identity,
    /// AR(1) Toeplitz: entry (i, j) is `rho^|i-j|`. Positive definite for
    /// every |rho| < 1; rho = 0 recovers the identity.
    ToeplitzAr1 { rho: f64 },
}

impl CovarianceKind {
    pub fn validate(&self) -> Result<()> {
        if let CovarianceKind::ToeplitzAr1 { rho } = self {
            if !rho.is_finite() || rho.abs() >= 1.0 {
                return Err(Error::InvalidParameter(format!(
                    "toeplitz_ar1 requires |rho| < 1, got {rho}"
                )));
            }
        }
        Ok(())
    }
}

/// One component of the covariate mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureComponent {
    pub mean: Vec<f64>,
    pub covariance: CovarianceKind,
}

/// Mixture-of-normals law for the covariate rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovariateSpec {
    pub dimension: usize,
    pub components: Vec<MixtureComponent>,
    pub mixing_weights: Vec<f64>,
}

impl CovariateSpec {
    /// Single standard-normal component.
    pub fn standard_normal(p: usize) -> Self {
        CovariateSpec {
            dimension: p,
            components: vec![MixtureComponent {
                mean: vec![0.0; p],
                covariance: CovarianceKind::Identity,
            }],
            mixing_weights: vec![1.0],
        }
    }

    /// Zero-mean two-component mixture: identity covariance with weight
    /// `weight_identity`, AR(1) Toeplitz with the remainder.
    pub fn identity_toeplitz_mixture(p: usize, weight_identity: f64, rho: f64) -> Self {
        CovariateSpec {
            dimension: p,
            components: vec![
                MixtureComponent {
                    mean: vec![0.0; p],
                    covariance: CovarianceKind::Identity,
                },
                MixtureComponent {
                    mean: vec![0.0; p],
                    covariance: CovarianceKind::ToeplitzAr1 { rho },
                },
            ],
            mixing_weights: vec![weight_identity, 1.0 - weight_identity],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimension == 0 {
            return Err(Error::InvalidParameter(
                "covariate dimension must be positive".into(),
            ));
        }
        if self.components.is_empty() {
            return Err(Error::InvalidParameter(
                "covariate mixture needs at least one component".into(),
            ));
        }
        if self.components.len() != self.mixing_weights.len() {
            return Err(Error::InvalidParameter(format!(
                "{} components but {} mixing weights",
                self.components.len(),
                self.mixing_weights.len()
            )));
        }
        for w in &self.mixing_weights {
            if !w.is_finite() || !(0.0..=1.0).contains(w) {
                return Err(Error::InvalidParameter(format!(
                    "mixing weight {w} outside [0, 1]"
                )));
            }
        }
        let total: f64 = self.mixing_weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "mixing weights sum to {total}, expected 1 within 1e-12"
            )));
        }
        for (k, comp) in self.components.iter().enumerate() {
            if comp.mean.len() != self.dimension {
                return Err(Error::InvalidParameter(format!(
                    "component {k} mean has length {}, expected {}",
                    comp.mean.len(),
                    self.dimension
                )));
            }
            comp.covariance.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DgpKind {
    Example1,
    Example2,
}

impl std::fmt::Display for DgpKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DgpKind::Example1 => write!(f, "example1"),
            DgpKind::Example2 => write!(f, "example2"),
        }
    }
}

/// How the Example1 treatment index combines its two coefficient vectors.
///
/// `IndexMix` is a single logistic whose index is the convex combination
/// `alpha * x'theta1 + (1 - alpha) * x'theta2`. `ModelMix` instead draws one of
/// the two logistic models per unit (theta1 with probability `alpha`) and
/// assigns treatment from the drawn model alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropensityForm {
    IndexMix,
    ModelMix,
}

impl std::fmt::Display for PropensityForm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PropensityForm::IndexMix => write!(f, "index_mix"),
            PropensityForm::ModelMix => write!(f, "model_mix"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutcomeParams {
    Example1 { beta: Vec<f64>, delta: Vec<f64> },
    Example2 { beta0: Vec<f64>, beta1: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PropensityParams {
    Example1 {
        theta1: Vec<f64>,
        theta2: Vec<f64>,
        alpha: f64,
    },
    Example2 {
        gamma: Vec<f64>,
    },
}

/// Full parameterization of a synthetic causal process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpSpec {
    pub kind: DgpKind,
    pub p: usize,
    pub covariates: CovariateSpec,
    pub outcome: OutcomeParams,
    pub propensity: PropensityParams,
    pub noise_sd: f64,
    /// Example1 only; ignored by Example2.
    #[serde(default = "PropensityForm::default_index_mix")]
    pub propensity_form: PropensityForm,
    /// Share one noise draw across both potential outcomes (default), so a
    /// unit's two arms differ only by the treatment term.
    #[serde(default = "default_true")]
    pub shared_noise: bool,
    /// Example2 only: add the treatment indicator to the outcome, moving the
    /// true effect from 0 to 1.
    #[serde(default)]
    pub add_treatment_shift: bool,
}

impl PropensityForm {
    fn default_index_mix() -> Self {
        PropensityForm::IndexMix
    }
}

fn default_true() -> bool {
    true
}

impl DgpSpec {
    /// Heterogeneous-confounding process: mixture covariates (identity weight
    /// 0.7, AR(1) Toeplitz rho = -0.5), outcome `x'beta + log|x'delta| + a`
    /// with beta all ones and delta = 2 beta, logistic treatment index
    /// `0.8 x'theta1 + 0.2 x'theta2` with theta1 all ones, theta2 = theta1/2.
    pub fn example1(p: usize, noise_sd: f64) -> Self {
        let beta = vec![1.0; p];
        let delta: Vec<f64> = beta.iter().map(|b| 2.0 * b).collect();
        let theta1 = vec![1.0; p];
        let theta2: Vec<f64> = theta1.iter().map(|t| t / 2.0).collect();
        DgpSpec {
            kind: DgpKind::Example1,
            p,
            covariates: CovariateSpec::identity_toeplitz_mixture(p, 0.7, -0.5),
            outcome: OutcomeParams::Example1 { beta, delta },
            propensity: PropensityParams::Example1 {
                theta1,
                theta2,
                alpha: 0.8,
            },
            noise_sd,
            propensity_form: PropensityForm::IndexMix,
            shared_noise: true,
            add_treatment_shift: false,
        }
    }

    /// High-dimensional sparse process: iid standard-normal covariates,
    /// outcome means `x'beta_a` with beta0 = e1 + e3 and beta1 = e1 + e4,
    /// logistic propensity with gamma = e1 + e2. Requires p >= 4.
    pub fn example2(p: usize, noise_sd: f64) -> Self {
        let mut beta0 = vec![0.0; p];
        let mut beta1 = vec![0.0; p];
        let mut gamma = vec![0.0; p];
        if p >= 1 {
            beta0[0] = 1.0;
            beta1[0] = 1.0;
            gamma[0] = 1.0;
        }
        if p >= 2 {
            gamma[1] = 1.0;
        }
        if p >= 3 {
            beta0[2] = 1.0;
        }
        if p >= 4 {
            beta1[3] = 1.0;
        }
        DgpSpec {
            kind: DgpKind::Example2,
            p,
            covariates: CovariateSpec::standard_normal(p),
            outcome: OutcomeParams::Example2 { beta0, beta1 },
            propensity: PropensityParams::Example2 { gamma },
            noise_sd,
            propensity_form: PropensityForm::IndexMix,
            shared_noise: true,
            add_treatment_shift: false,
        }
    }

    pub fn with_propensity_form(mut self, form: PropensityForm) -> Self {
        self.propensity_form = form;
        self
    }

    pub fn with_shared_noise(mut self, shared: bool) -> Self {
        self.shared_noise = shared;
        self
    }

    pub fn with_treatment_shift(mut self, shift: bool) -> Self {
        self.add_treatment_shift = shift;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(Error::InvalidParameter("p must be positive".into()));
        }
        if !self.noise_sd.is_finite() || self.noise_sd <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "noise_sd must be positive, got {}",
                self.noise_sd
            )));
        }
        self.covariates.validate()?;
        if self.covariates.dimension != self.p {
            return Err(Error::InvalidParameter(format!(
                "covariate dimension {} does not match p = {}",
                self.covariates.dimension, self.p
            )));
        }
        match (self.kind, &self.outcome, &self.propensity) {
            (
                DgpKind::Example1,
                OutcomeParams::Example1 { beta, delta },
                PropensityParams::Example1 {
                    theta1,
                    theta2,
                    alpha,
                },
            ) => {
                let ones = vec![1.0; self.p];
                if beta != &ones {
                    return Err(Error::InvalidParameter(
                        "example1 requires beta to be all ones".into(),
                    ));
                }
                if delta.len() != self.p || delta.iter().zip(beta).any(|(d, b)| *d != 2.0 * b) {
                    return Err(Error::InvalidParameter(
                        "example1 requires delta = 2 * beta".into(),
                    ));
                }
                if theta1 != &ones {
                    return Err(Error::InvalidParameter(
                        "example1 requires theta1 to be all ones".into(),
                    ));
                }
                if theta2.len() != self.p
                    || theta2.iter().zip(theta1).any(|(h, t)| *h != t / 2.0)
                {
                    return Err(Error::InvalidParameter(
                        "example1 requires theta2 = theta1 / 2".into(),
                    ));
                }
                if *alpha != 0.8 {
                    return Err(Error::InvalidParameter(format!(
                        "example1 requires alpha = 0.8, got {alpha}"
                    )));
                }
            }
            (
                DgpKind::Example2,
                OutcomeParams::Example2 { beta0, beta1 },
                PropensityParams::Example2 { gamma },
            ) => {
                if self.p < 4 {
                    return Err(Error::InvalidParameter(format!(
                        "example2 requires p >= 4 (beta1 places mass on coordinate 4), got p = {}",
                        self.p
                    )));
                }
                let expect = |v: &[f64], hot: &[usize], name: &str| -> Result<()> {
                    if v.len() != self.p {
                        return Err(Error::InvalidParameter(format!(
                            "{name} has length {}, expected {}",
                            v.len(),
                            self.p
                        )));
                    }
                    for (i, &x) in v.iter().enumerate() {
                        let want = if hot.contains(&i) { 1.0 } else { 0.0 };
                        if x != want {
                            return Err(Error::InvalidParameter(format!(
                                "{name} must be 1 at coordinates {hot:?} and 0 elsewhere"
                            )));
                        }
                    }
                    Ok(())
                };
                expect(beta0, &[0, 2], "beta0")?;
                expect(beta1, &[0, 3], "beta1")?;
                expect(gamma, &[0, 1], "gamma")?;
            }
            _ => {
                return Err(Error::InvalidParameter(
                    "outcome/propensity parameter family does not match kind".into(),
                ));
            }
        }
        Ok(())
    }
}
