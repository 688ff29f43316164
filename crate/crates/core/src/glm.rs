//! Exact parametric baselines: ordinary least squares and Newton/IRLS
//! logistic regression. Both fits are deterministic; an intercept column is
//! prepended by default and can be disabled.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::aipw::Predict;
use crate::error::{Error, Result};
use crate::numeric::{dot, sigmoid};

/// Coefficient magnitude past which the logistic index is numerically
/// saturated; reaching it is treated as (quasi-)separation.
pub const SEPARATION_BOUND: f64 = 30.0;

/// Relative pivot tolerance for declaring a design column redundant.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Converged,
    MaxIterations,
    /// Coefficients ran past [`SEPARATION_BOUND`]; estimates are flagged, not
    /// an error.
    Separation,
    /// No signal to fit (all labels identical).
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub converged: bool,
    pub iterations: usize,
    pub status: FitStatus,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub intercept: bool,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        LogisticOptions {
            max_iter: 100,
            tol: 1e-8,
            intercept: true,
        }
    }
}

fn design(x: &DMatrix<f64>, intercept: bool) -> DMatrix<f64> {
    if intercept {
        let n = x.nrows();
        let mut a = DMatrix::zeros(n, x.ncols() + 1);
        for i in 0..n {
            a[(i, 0)] = 1.0;
        }
        a.view_mut((0, 1), (n, x.ncols())).copy_from(x);
        a
    } else {
        x.clone()
    }
}

/// Maps augmented-design column indices back to user-facing labels
/// (0-based covariate indices; the intercept reports as usize::MAX).
fn original_columns(cols: &[usize], intercept: bool) -> Vec<usize> {
    cols.iter()
        .map(|&c| {
            if intercept {
                if c == 0 {
                    usize::MAX
                } else {
                    c - 1
                }
            } else {
                c
            }
        })
        .collect()
}

/// Least-squares fit via column-pivoted QR.
pub fn fit_ols(x: &DMatrix<f64>, y: &[f64], intercept: bool) -> Result<LinearModel> {
    let n = x.nrows();
    let p = x.ncols();
    if y.len() != n {
        return Err(Error::InvalidInput(format!(
            "y has length {}, expected {n}",
            y.len()
        )));
    }
    let cols = p + usize::from(intercept);
    if n <= cols {
        return Err(Error::InvalidInput(format!(
            "need n > {cols} rows for {p} covariates, got {n}"
        )));
    }
    let a = design(x, intercept);
    let qr = a.clone().col_piv_qr();

    // Rank check on the pivoted R diagonal; trailing pivoted columns are the
    // redundant ones.
    let r = qr.r();
    let kmax = r.nrows().min(r.ncols());
    let lead = r[(0, 0)].abs().max(f64::MIN_POSITIVE);
    let rank = (0..kmax)
        .take_while(|&k| r[(k, k)].abs() > RANK_TOL * lead)
        .count();
    if rank < cols {
        let mut labels = DMatrix::from_fn(1, cols, |_, j| j as f64);
        qr.p().permute_columns(&mut labels);
        let offending: Vec<usize> = (rank..cols).map(|j| labels[(0, j)] as usize).collect();
        return Err(Error::SingularDesign {
            columns: original_columns(&offending, intercept),
        });
    }

    let rhs = DVector::from_column_slice(y);
    let solution = qr
        .solve(&rhs)
        .ok_or_else(|| Error::SingularDesign { columns: vec![] })?;
    let (b0, coef_start) = if intercept {
        (solution[0], 1)
    } else {
        (0.0, 0)
    };
    Ok(LinearModel {
        coefficients: solution.as_slice()[coef_start..].to_vec(),
        intercept: b0,
    })
}

/// Binomial log-likelihood at linear predictor `eta` (stable softplus form).
fn log_likelihood(eta: &DVector<f64>, d: &[u8]) -> f64 {
    let mut ll = 0.0;
    for (i, &di) in d.iter().enumerate() {
        let e = eta[i];
        let softplus = if e > 0.0 {
            e + (-e).exp().ln_1p()
        } else {
            e.exp().ln_1p()
        };
        ll += di as f64 * e - softplus;
    }
    ll
}

/// Newton/IRLS logistic fit. Iterates until the max-norm coefficient change
/// drops below `tol`, with step halving so the log-likelihood never decreases.
/// Perfect separation is reported through the status flag, not an error.
pub fn fit_logistic(x: &DMatrix<f64>, d: &[u8], options: &LogisticOptions) -> Result<LogisticModel> {
    let n = x.nrows();
    let p = x.ncols();
    if d.len() != n {
        return Err(Error::InvalidInput(format!(
            "d has length {}, expected {n}",
            d.len()
        )));
    }
    if d.iter().any(|&v| v > 1) {
        return Err(Error::InvalidInput("labels must be 0 or 1".into()));
    }
    let cols = p + usize::from(options.intercept);
    if n <= cols {
        return Err(Error::InvalidInput(format!(
            "need n > {cols} rows for {p} covariates, got {n}"
        )));
    }

    let ones: usize = d.iter().map(|&v| v as usize).sum();
    if ones == 0 || ones == n {
        // No signal: the likelihood increases without bound in the intercept.
        return Ok(LogisticModel {
            coefficients: vec![0.0; p],
            intercept: if ones == 0 {
                -SEPARATION_BOUND
            } else {
                SEPARATION_BOUND
            },
            converged: false,
            iterations: 0,
            status: FitStatus::Degenerate,
        });
    }

    let a = design(x, options.intercept);
    let mut beta = DVector::zeros(cols);
    let mut eta = &a * &beta;
    let mut ll = log_likelihood(&eta, d);
    let mut status = FitStatus::MaxIterations;
    let mut iterations = options.max_iter;

    for iter in 1..=options.max_iter {
        let mu: DVector<f64> = eta.map(sigmoid);
        let residual = DVector::from_fn(n, |i, _| d[i] as f64 - mu[i]);
        let gradient = a.transpose() * &residual;

        // Fisher information X'WX via the sqrt(w)-scaled design.
        let mut scaled = a.clone();
        for i in 0..n {
            let w = (mu[i] * (1.0 - mu[i])).sqrt();
            for j in 0..cols {
                scaled[(i, j)] *= w;
            }
        }
        let information = scaled.transpose() * &scaled;
        let step = match information.cholesky() {
            Some(ch) => ch.solve(&gradient),
            // Weights collapsed; the index is saturated.
            None => {
                status = FitStatus::Separation;
                iterations = iter;
                break;
            }
        };

        // Step halving keeps the log-likelihood non-decreasing.
        let mut t = 1.0;
        let (candidate, cand_eta, cand_ll) = loop {
            let candidate = &beta + &step * t;
            let cand_eta = &a * &candidate;
            let cand_ll = log_likelihood(&cand_eta, d);
            if cand_ll >= ll - 1e-10 || t < 1e-12 {
                break (candidate, cand_eta, cand_ll);
            }
            t /= 2.0;
        };
        debug_assert!(
            cand_ll >= ll - 1e-8,
            "log-likelihood decreased: {ll} -> {cand_ll}"
        );

        let change = (&candidate - &beta).amax();
        beta = candidate;
        eta = cand_eta;
        ll = cand_ll;

        if beta.amax() > SEPARATION_BOUND {
            status = FitStatus::Separation;
            iterations = iter;
            break;
        }
        if change < options.tol {
            status = FitStatus::Converged;
            iterations = iter;
            break;
        }
    }

    let (b0, coef_start) = if options.intercept {
        (beta[0], 1)
    } else {
        (0.0, 0)
    };
    Ok(LogisticModel {
        coefficients: beta.as_slice()[coef_start..].to_vec(),
        intercept: b0,
        converged: status == FitStatus::Converged,
        iterations,
        status,
    })
}

impl LinearModel {
    pub fn predict_one(&self, x: &[f64]) -> f64 {
        self.intercept + dot(x, &self.coefficients)
    }
}

impl LogisticModel {
    pub fn predict_one(&self, x: &[f64]) -> f64 {
        sigmoid(self.intercept + dot(x, &self.coefficients))
    }
}

impl Predict for LinearModel {
    fn predict_row(&self, x: &[f64]) -> f64 {
        self.predict_one(x)
    }
}

impl Predict for LogisticModel {
    fn predict_row(&self, x: &[f64]) -> f64 {
        self.predict_one(x)
    }
}

fn check_width(model_p: usize, x: &DMatrix<f64>) -> Result<()> {
    if x.ncols() != model_p {
        return Err(Error::InvalidInput(format!(
            "model expects {model_p} covariates, got {}",
            x.ncols()
        )));
    }
    Ok(())
}

/// Affine predictions, one per row.
pub fn predict_linear(model: &LinearModel, x: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_width(model.coefficients.len(), x)?;
    Ok((0..x.nrows())
        .map(|i| {
            let mut acc = model.intercept;
            for j in 0..x.ncols() {
                acc += model.coefficients[j] * x[(i, j)];
            }
            acc
        })
        .collect())
}

/// Probabilities `sigmoid(intercept + x'coef)`, one per row; strictly inside
/// (0, 1) for finite inputs.
pub fn predict_proba(model: &LogisticModel, x: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_width(model.coefficients.len(), x)?;
    Ok((0..x.nrows())
        .map(|i| {
            let mut acc = model.intercept;
            for j in 0..x.ncols() {
                acc += model.coefficients[j] * x[(i, j)];
            }
            sigmoid(acc)
        })
        .collect())
}
