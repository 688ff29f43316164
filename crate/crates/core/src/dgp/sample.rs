//! Covariance construction and multivariate-normal sampling.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

use super::spec::{CovarianceKind, CovariateSpec};

/// AR(1) Toeplitz covariance: entry (i, j) is `rho^|i-j|`.
pub fn toeplitz_ar1(p: usize, rho: f64) -> Result<DMatrix<f64>> {
    if p == 0 {
        return Err(Error::InvalidParameter("p must be positive".into()));
    }
    if !rho.is_finite() || rho.abs() >= 1.0 {
        return Err(Error::InvalidParameter(format!(
            "toeplitz_ar1 requires |rho| < 1, got {rho}"
        )));
    }
    Ok(DMatrix::from_fn(p, p, |i, j| {
        rho.powi((i as i32 - j as i32).abs())
    }))
}

/// Dense covariance matrix for a component kind.
pub fn covariance_matrix(kind: &CovarianceKind, p: usize) -> Result<DMatrix<f64>> {
    match kind {
        CovarianceKind::Identity => Ok(DMatrix::identity(p, p)),
        CovarianceKind::ToeplitzAr1 { rho } => toeplitz_ar1(p, *rho),
    }
}

/// Sampler for one normal component. Identity components skip the triangular
/// multiply entirely.
struct ComponentSampler {
    mean: Vec<f64>,
    /// Lower Cholesky factor, column-major; `None` for identity covariance.
    chol: Option<DMatrix<f64>>,
}

impl ComponentSampler {
    fn new(mean: Vec<f64>, kind: &CovarianceKind) -> Result<Self> {
        let chol = match kind {
            CovarianceKind::Identity => None,
            _ => {
                let p = mean.len();
                let cov = covariance_matrix(kind, p)?;
                let factor = cov.cholesky().ok_or_else(|| {
                    Error::NotPositiveDefinite(format!("{kind:?} with p = {p}"))
                })?;
                Some(factor.l())
            }
        };
        Ok(ComponentSampler { mean, chol })
    }

    /// Draws one row into `out`, consuming exactly `p` standard normals.
    fn sample_row<R: Rng + ?Sized>(&self, rng: &mut R, z: &mut [f64], out: &mut [f64]) {
        let p = self.mean.len();
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        match &self.chol {
            None => {
                for i in 0..p {
                    out[i] = self.mean[i] + z[i];
                }
            }
            Some(l) => {
                let data = l.as_slice(); // column-major, p x p
                out.copy_from_slice(&self.mean);
                for (j, &zj) in z.iter().enumerate() {
                    let col = &data[j * p..(j + 1) * p];
                    // L is lower triangular: rows < j are zero.
                    for i in j..p {
                        out[i] += col[i] * zj;
                    }
                }
            }
        }
    }
}

/// Row sampler for a mixture of normal components.
///
/// Per row the draw order is fixed: one uniform selects the component (skipped
/// when there is a single component), then `p` standard normals fill the row.
pub struct MixtureSampler {
    components: Vec<ComponentSampler>,
    cumulative_weights: Vec<f64>,
    p: usize,
}

impl MixtureSampler {
    pub fn new(spec: &CovariateSpec) -> Result<Self> {
        spec.validate()?;
        let components = spec
            .components
            .iter()
            .map(|c| ComponentSampler::new(c.mean.clone(), &c.covariance))
            .collect::<Result<Vec<_>>>()?;
        let mut acc = 0.0;
        let cumulative_weights = spec
            .mixing_weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        Ok(MixtureSampler {
            components,
            cumulative_weights,
            p: spec.dimension,
        })
    }

    pub fn dimension(&self) -> usize {
        self.p
    }

    /// Draws one row; returns the component index used.
    pub fn sample_row<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        z: &mut [f64],
        out: &mut [f64],
    ) -> usize {
        let k = if self.components.len() == 1 {
            0
        } else {
            let u: f64 = rng.random();
            self.cumulative_weights
                .iter()
                .position(|&c| u < c)
                .unwrap_or(self.components.len() - 1)
        };
        self.components[k].sample_row(rng, z, out);
        k
    }
}

/// `n` independent draws from N(mean, covariance), one per row.
///
/// Rows are `mean + L z` with `L` the lower Cholesky factor of the covariance
/// and `z` standard normal.
pub fn sample_mvn<R: Rng + ?Sized>(
    n: usize,
    mean: &[f64],
    covariance: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let p = mean.len();
    if covariance.nrows() != p || covariance.ncols() != p {
        return Err(Error::InvalidInput(format!(
            "covariance is {}x{}, expected {p}x{p}",
            covariance.nrows(),
            covariance.ncols()
        )));
    }
    let factor = covariance
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("covariance in sample_mvn".into()))?;
    let sampler = ComponentSampler {
        mean: mean.to_vec(),
        chol: Some(factor.l()),
    };
    let mut out = DMatrix::zeros(n, p);
    let mut z = vec![0.0; p];
    let mut row = vec![0.0; p];
    for i in 0..n {
        sampler.sample_row(rng, &mut z, &mut row);
        for j in 0..p {
            out[(i, j)] = row[j];
        }
    }
    Ok(out)
}

/// `n` rows from the covariate mixture.
pub fn sample_covariates<R: Rng + ?Sized>(
    n: usize,
    spec: &CovariateSpec,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    Ok(sample_covariates_labeled(n, spec, rng)?.0)
}

/// Like [`sample_covariates`] but also reports the component of every row.
pub fn sample_covariates_labeled<R: Rng + ?Sized>(
    n: usize,
    spec: &CovariateSpec,
    rng: &mut R,
) -> Result<(DMatrix<f64>, Vec<usize>)> {
    let sampler = MixtureSampler::new(spec)?;
    let p = sampler.dimension();
    let mut out = DMatrix::zeros(n, p);
    let mut labels = Vec::with_capacity(n);
    let mut z = vec![0.0; p];
    let mut row = vec![0.0; p];
    for i in 0..n {
        labels.push(sampler.sample_row(rng, &mut z, &mut row));
        for j in 0..p {
            out[(i, j)] = row[j];
        }
    }
    Ok((out, labels))
}
