//! Dataset generation, oracle nuisance functions, and the true effect.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::aipw::{NuisanceFit, Predict};
use crate::error::{Error, Result};
use crate::numeric::{dot, sigmoid};
use crate::seed;

use super::sample::MixtureSampler;
use super::spec::{DgpKind, DgpSpec, OutcomeParams, PropensityForm, PropensityParams};

/// Rows whose |x'delta| falls below this floor are redrawn during generation
/// (the log term would blow up); oracle evaluation clamps to it instead, so
/// arbitrary query points stay finite.
pub(crate) const LOG_ARG_FLOOR: f64 = 1e-12;

/// Propensity range treated as comfortable overlap when summarizing a draw.
const OVERLAP_BAND: (f64, f64) = (0.01, 0.99);

/// Summary of the oracle propensities realized in one generated dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapStats {
    pub min_propensity: f64,
    pub max_propensity: f64,
    /// Fraction of rows with oracle propensity outside [0.01, 0.99].
    pub fraction_outside: f64,
}

/// One generated sample: covariates, realized treatment and outcome, and (for
/// oracle use) both potential outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// n x p covariate matrix.
    pub x: DMatrix<f64>,
    /// Binary treatment per row.
    pub d: Vec<u8>,
    /// Observed outcome: `y = d * y1 + (1 - d) * y0` row by row.
    pub y: Vec<f64>,
    pub y0: Option<Vec<f64>>,
    pub y1: Option<Vec<f64>>,
    /// Seed the dataset was generated from (0 when imported without metadata).
    pub seed: u64,
    pub overlap: Option<OverlapStats>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Treated fraction.
    pub fn treatment_frequency(&self) -> f64 {
        if self.d.is_empty() {
            return 0.0;
        }
        self.d.iter().map(|&d| d as usize).sum::<usize>() as f64 / self.d.len() as f64
    }

    /// Checks the structural invariants: binary treatment, finite rows, and
    /// `y = d y1 + (1-d) y0` wherever potential outcomes are present.
    pub fn check_consistency(&self) -> Result<()> {
        let n = self.n();
        if self.d.len() != n || self.y.len() != n {
            return Err(Error::InvalidInput(format!(
                "length mismatch: n = {n}, d = {}, y = {}",
                self.d.len(),
                self.y.len()
            )));
        }
        if self.d.iter().any(|&d| d > 1) {
            return Err(Error::InvalidInput("treatment entries must be 0 or 1".into()));
        }
        if self.x.iter().any(|v| !v.is_finite()) || self.y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite entry in dataset".into()));
        }
        if let (Some(y0), Some(y1)) = (&self.y0, &self.y1) {
            if y0.len() != n || y1.len() != n {
                return Err(Error::InvalidInput(
                    "potential outcome vectors must have length n".into(),
                ));
            }
            for i in 0..n {
                let want = if self.d[i] == 1 { y1[i] } else { y0[i] };
                if self.y[i] != want {
                    return Err(Error::InvalidInput(format!(
                        "row {i}: y does not match the selected potential outcome"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Generates `n` rows from `spec` using the given seed. Identical
    /// `(spec, n, seed)` triples produce bitwise-identical datasets.
    pub fn generate(spec: &DgpSpec, n: usize, dataset_seed: u64) -> Result<Dataset> {
        use rand::SeedableRng;
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(dataset_seed);
        generate_with_rng(spec, n, &mut rng, dataset_seed)
    }
}

/// Draw order per row (fixed for reproducibility): covariate row (component
/// label + p normals, repeated on a singularity redraw), then the model pick
/// for the model-mix propensity, then the treatment uniform, then one noise
/// normal (two when per-arm noise is independent).
fn generate_with_rng(
    spec: &DgpSpec,
    n: usize,
    rng: &mut ChaCha8Rng,
    dataset_seed: u64,
) -> Result<Dataset> {
    let p = spec.p;
    let sampler = MixtureSampler::new(&spec.covariates)?;
    let mut x = DMatrix::zeros(n, p);
    let mut d = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut y0 = Vec::with_capacity(n);
    let mut y1 = Vec::with_capacity(n);

    let mut z = vec![0.0; p];
    let mut row = vec![0.0; p];
    let mut min_pi = f64::INFINITY;
    let mut max_pi = f64::NEG_INFINITY;
    let mut outside = 0usize;

    for i in 0..n {
        let (mu_base, oracle_pi, di) = match spec.kind {
            DgpKind::Example1 => {
                let (beta, delta) = match &spec.outcome {
                    OutcomeParams::Example1 { beta, delta } => (beta, delta),
                    _ => unreachable!("validated above"),
                };
                let (theta1, theta2, alpha) = match &spec.propensity {
                    PropensityParams::Example1 {
                        theta1,
                        theta2,
                        alpha,
                    } => (theta1, theta2, *alpha),
                    _ => unreachable!("validated above"),
                };
                // Redraw rows whose log argument underflows the floor; a
                // probability-zero event under continuous covariates.
                let s_delta = loop {
                    sampler.sample_row(rng, &mut z, &mut row);
                    let s = dot(&row, delta);
                    if s.abs() >= LOG_ARG_FLOOR {
                        break s;
                    }
                };
                let mu_base = dot(&row, beta) + s_delta.abs().ln();
                let (oracle_pi, assign_pi) = match spec.propensity_form {
                    PropensityForm::IndexMix => {
                        let pi =
                            sigmoid(alpha * dot(&row, theta1) + (1.0 - alpha) * dot(&row, theta2));
                        (pi, pi)
                    }
                    PropensityForm::ModelMix => {
                        let pi1 = sigmoid(dot(&row, theta1));
                        let pi2 = sigmoid(dot(&row, theta2));
                        let marginal = alpha * pi1 + (1.0 - alpha) * pi2;
                        let pick: f64 = rng.random();
                        let assign = if pick < alpha { pi1 } else { pi2 };
                        (marginal, assign)
                    }
                };
                let u: f64 = rng.random();
                (mu_base, oracle_pi, u < assign_pi)
            }
            DgpKind::Example2 => {
                let gamma = match &spec.propensity {
                    PropensityParams::Example2 { gamma } => gamma,
                    _ => unreachable!("validated above"),
                };
                sampler.sample_row(rng, &mut z, &mut row);
                let pi = sigmoid(dot(&row, gamma));
                let u: f64 = rng.random();
                (0.0, pi, u < pi)
            }
        };

        min_pi = min_pi.min(oracle_pi);
        max_pi = max_pi.max(oracle_pi);
        if oracle_pi < OVERLAP_BAND.0 || oracle_pi > OVERLAP_BAND.1 {
            outside += 1;
        }

        let eps0: f64 = spec.noise_sd * rng.sample::<f64, _>(StandardNormal);
        let eps1 = if spec.shared_noise {
            eps0
        } else {
            spec.noise_sd * rng.sample::<f64, _>(StandardNormal)
        };

        let (m0, m1) = match spec.kind {
            DgpKind::Example1 => (mu_base, mu_base + 1.0),
            DgpKind::Example2 => {
                let (beta0, beta1) = match &spec.outcome {
                    OutcomeParams::Example2 { beta0, beta1 } => (beta0, beta1),
                    _ => unreachable!("validated above"),
                };
                let shift = if spec.add_treatment_shift { 1.0 } else { 0.0 };
                (dot(&row, beta0), dot(&row, beta1) + shift)
            }
        };

        for j in 0..p {
            x[(i, j)] = row[j];
        }
        let yi0 = m0 + eps0;
        let yi1 = m1 + eps1;
        d.push(di as u8);
        y.push(if di { yi1 } else { yi0 });
        y0.push(yi0);
        y1.push(yi1);
    }

    let overlap = if n > 0 {
        Some(OverlapStats {
            min_propensity: min_pi,
            max_propensity: max_pi,
            fraction_outside: outside as f64 / n as f64,
        })
    } else {
        None
    };

    Ok(Dataset {
        x,
        d,
        y,
        y0: Some(y0),
        y1: Some(y1),
        seed: dataset_seed,
        overlap,
    })
}

/// Exact outcome-mean predictor for one arm.
struct OracleMu {
    kind: DgpKind,
    beta: Vec<f64>,
    /// Example1's delta; empty for Example2.
    delta: Vec<f64>,
    arm_term: f64,
}

impl Predict for OracleMu {
    fn predict_row(&self, x: &[f64]) -> f64 {
        match self.kind {
            DgpKind::Example1 => {
                let s = dot(x, &self.delta).abs().max(LOG_ARG_FLOOR);
                dot(x, &self.beta) + s.ln() + self.arm_term
            }
            DgpKind::Example2 => dot(x, &self.beta) + self.arm_term,
        }
    }
}

/// Exact propensity predictor.
struct OraclePi {
    form: PropensityForm,
    theta1: Vec<f64>,
    theta2: Vec<f64>,
    alpha: f64,
}

impl Predict for OraclePi {
    fn predict_row(&self, x: &[f64]) -> f64 {
        match self.form {
            PropensityForm::IndexMix => sigmoid(
                self.alpha * dot(x, &self.theta1) + (1.0 - self.alpha) * dot(x, &self.theta2),
            ),
            PropensityForm::ModelMix => {
                self.alpha * sigmoid(dot(x, &self.theta1))
                    + (1.0 - self.alpha) * sigmoid(dot(x, &self.theta2))
            }
        }
    }
}

/// Exact-evaluation nuisance functions implied by `spec`.
pub fn oracle_nuisances(spec: &DgpSpec) -> Result<NuisanceFit> {
    spec.validate()?;
    let (mu0, mu1): (OracleMu, OracleMu) = match (&spec.kind, &spec.outcome) {
        (DgpKind::Example1, OutcomeParams::Example1 { beta, delta }) => (
            OracleMu {
                kind: DgpKind::Example1,
                beta: beta.clone(),
                delta: delta.clone(),
                arm_term: 0.0,
            },
            OracleMu {
                kind: DgpKind::Example1,
                beta: beta.clone(),
                delta: delta.clone(),
                arm_term: 1.0,
            },
        ),
        (DgpKind::Example2, OutcomeParams::Example2 { beta0, beta1 }) => {
            let shift = if spec.add_treatment_shift { 1.0 } else { 0.0 };
            (
                OracleMu {
                    kind: DgpKind::Example2,
                    beta: beta0.clone(),
                    delta: Vec::new(),
                    arm_term: 0.0,
                },
                OracleMu {
                    kind: DgpKind::Example2,
                    beta: beta1.clone(),
                    delta: Vec::new(),
                    arm_term: shift,
                },
            )
        }
        _ => unreachable!("validated above"),
    };
    let pi = match &spec.propensity {
        PropensityParams::Example1 {
            theta1,
            theta2,
            alpha,
        } => OraclePi {
            form: spec.propensity_form,
            theta1: theta1.clone(),
            theta2: theta2.clone(),
            alpha: *alpha,
        },
        PropensityParams::Example2 { gamma } => OraclePi {
            form: PropensityForm::IndexMix,
            theta1: gamma.clone(),
            theta2: vec![0.0; spec.p],
            alpha: 1.0,
        },
    };
    Ok(NuisanceFit::new(
        Box::new(mu0),
        Box::new(mu1),
        Box::new(pi),
        format!("oracle({}, p={})", spec.kind, spec.p),
    ))
}

/// Analytic average treatment effect of `spec`.
///
/// Example1's outcome adds the treatment indicator directly, so the effect is
/// exactly 1 for any dimension. Example2's arms differ by `x4 - x3`, which has
/// mean zero under the mean-zero covariate law, so the effect is 0 (or 1 with
/// the treatment shift enabled).
pub fn true_ate(spec: &DgpSpec) -> f64 {
    match spec.kind {
        DgpKind::Example1 => 1.0,
        DgpKind::Example2 => {
            if spec.add_treatment_shift {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// Monte Carlo estimate of the average treatment effect with its standard
/// error, via fresh covariate draws pushed through the oracle outcome means.
/// Requires at least 100_000 draws.
pub fn true_ate_monte_carlo<R: Rng + ?Sized>(
    spec: &DgpSpec,
    oracle_draws: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    if oracle_draws < 100_000 {
        return Err(Error::InvalidParameter(format!(
            "oracle_draws must be at least 100000, got {oracle_draws}"
        )));
    }
    spec.validate()?;
    let nuisances = oracle_nuisances(spec)?;
    let sampler = MixtureSampler::new(&spec.covariates)?;
    let mut z = vec![0.0; spec.p];
    let mut row = vec![0.0; spec.p];
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for k in 0..oracle_draws {
        sampler.sample_row(rng, &mut z, &mut row);
        let effect = nuisances.mu1.predict_row(&row) - nuisances.mu0.predict_row(&row);
        let delta = effect - mean;
        mean += delta / (k + 1) as f64;
        m2 += delta * (effect - mean);
    }
    let var = m2 / (oracle_draws - 1) as f64;
    Ok((mean, (var / oracle_draws as f64).sqrt()))
}

/// Derives the dataset seed for a (cell, replication) pair of a harness run.
pub fn dataset_seed(master_seed: u64, cell: usize, replication: usize) -> u64 {
    seed::substream(
        master_seed,
        &[seed::purpose::DATASET, cell as u64, replication as u64],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_for;

    #[test]
    fn example1_unit_effects_are_exactly_one() {
        let spec = DgpSpec::example1(3, 1.0);
        let ds = Dataset::generate(&spec, 500, 42).unwrap();
        let (y0, y1) = (ds.y0.as_ref().unwrap(), ds.y1.as_ref().unwrap());
        for i in 0..ds.n() {
            assert_eq!(y1[i] - y0[i], 1.0, "row {i}");
        }
    }

    #[test]
    fn observed_outcome_matches_selected_arm() {
        for spec in [DgpSpec::example1(2, 1.0), DgpSpec::example2(5, 1.0)] {
            let ds = Dataset::generate(&spec, 300, 7).unwrap();
            ds.check_consistency().unwrap();
        }
    }

    #[test]
    fn generation_is_bitwise_deterministic() {
        let spec = DgpSpec::example1(4, 1.0);
        let a = Dataset::generate(&spec, 100, 99).unwrap();
        let b = Dataset::generate(&spec, 100, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn oracle_propensity_at_zero_is_half() {
        for spec in [DgpSpec::example1(2, 1.0), DgpSpec::example2(4, 1.0)] {
            let nf = oracle_nuisances(&spec).unwrap();
            let zero = vec![0.0; spec.p];
            assert_eq!(nf.pi1.predict_row(&zero), 0.5);
        }
    }

    #[test]
    fn example2_zero_row_has_zero_outcome_means() {
        let nf = oracle_nuisances(&DgpSpec::example2(4, 1.0)).unwrap();
        let zero = vec![0.0; 4];
        assert_eq!(nf.mu0.predict_row(&zero), 0.0);
        assert_eq!(nf.mu1.predict_row(&zero), 0.0);
    }

    #[test]
    fn example2_unit_effect_is_x4_minus_x3() {
        let spec = DgpSpec::example2(6, 1.0);
        let ds = Dataset::generate(&spec, 400, 3).unwrap();
        let (y0, y1) = (ds.y0.as_ref().unwrap(), ds.y1.as_ref().unwrap());
        for i in 0..ds.n() {
            let want = ds.x[(i, 3)] - ds.x[(i, 2)];
            assert!((y1[i] - y0[i] - want).abs() < 1e-12, "row {i}");
        }
    }

    #[test]
    fn example2_effect_mean_is_zero_at_scale() {
        let spec = DgpSpec::example2(200, 1.0);
        let n = 100_000;
        let ds = Dataset::generate(&spec, n, 11).unwrap();
        let (y0, y1) = (ds.y0.as_ref().unwrap(), ds.y1.as_ref().unwrap());
        let mut mean = 0.0;
        let mut m2 = 0.0;
        for i in 0..n {
            let e = y1[i] - y0[i];
            let delta = e - mean;
            mean += delta / (i + 1) as f64;
            m2 += delta * (e - mean);
        }
        let se = (m2 / (n - 1) as f64 / n as f64).sqrt();
        assert!(mean.abs() < 3.0 * se, "mean effect {mean}, se {se}");
    }

    #[test]
    fn oracle_mu_example1_all_ones() {
        let p = 5;
        let nf = oracle_nuisances(&DgpSpec::example1(p, 1.0)).unwrap();
        let x = vec![1.0; p];
        let want0 = p as f64 + (2.0 * p as f64).ln();
        assert!((nf.mu0.predict_row(&x) - want0).abs() < 1e-12);
        assert!((nf.mu1.predict_row(&x) - (want0 + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn oracle_mu_example2_basis_vector() {
        let nf = oracle_nuisances(&DgpSpec::example2(5, 1.0)).unwrap();
        let mut e3 = vec![0.0; 5];
        e3[2] = 1.0;
        assert_eq!(nf.mu0.predict_row(&e3), 1.0);
        assert_eq!(nf.mu1.predict_row(&e3), 0.0);
    }

    #[test]
    fn oracle_mu_example1_is_finite_at_origin() {
        let nf = oracle_nuisances(&DgpSpec::example1(3, 1.0)).unwrap();
        let zero = vec![0.0; 3];
        assert!(nf.mu0.predict_row(&zero).is_finite());
        assert!(nf.mu1.predict_row(&zero).is_finite());
    }

    #[test]
    fn true_ate_analytic_values() {
        assert_eq!(true_ate(&DgpSpec::example1(2, 1.0)), 1.0);
        assert_eq!(true_ate(&DgpSpec::example1(20, 1.0)), 1.0);
        assert_eq!(true_ate(&DgpSpec::example2(200, 1.0)), 0.0);
        assert_eq!(
            true_ate(&DgpSpec::example2(10, 1.0).with_treatment_shift(true)),
            1.0
        );
    }

    #[test]
    fn true_ate_monte_carlo_agrees_with_analytic() {
        let spec = DgpSpec::example1(2, 1.0);
        let (est, se) = true_ate_monte_carlo(&spec, 1_000_000, &mut rng_for(1, &[2])).unwrap();
        // Example1 unit effects are constant, so the MC value is exact.
        assert!((est - 1.0).abs() <= 3.0 * se.max(1e-12), "est {est}, se {se}");

        let spec2 = DgpSpec::example2(8, 1.0);
        let (est2, se2) = true_ate_monte_carlo(&spec2, 1_000_000, &mut rng_for(1, &[3])).unwrap();
        assert!(est2.abs() <= 3.0 * se2, "est {est2}, se {se2}");
    }

    #[test]
    fn true_ate_monte_carlo_rejects_small_draws() {
        let spec = DgpSpec::example1(2, 1.0);
        assert!(true_ate_monte_carlo(&spec, 10_000, &mut rng_for(0, &[0])).is_err());
    }

    #[test]
    fn treatment_frequency_matches_oracle() {
        // Empirical mean of D against a large independent Monte Carlo oracle
        // of E[sigma(0.8 x'theta1 + 0.2 x'theta2)].
        let spec = DgpSpec::example1(2, 1.0);
        let n = 100_000;
        let ds = Dataset::generate(&spec, n, 17).unwrap();
        let freq = ds.treatment_frequency();

        let nf = oracle_nuisances(&spec).unwrap();
        let sampler = MixtureSampler::new(&spec.covariates).unwrap();
        let mut rng = rng_for(1818, &[0]);
        let draws = 1_000_000;
        let mut z = vec![0.0; 2];
        let mut row = vec![0.0; 2];
        let mut mean = 0.0;
        let mut m2 = 0.0;
        for k in 0..draws {
            sampler.sample_row(&mut rng, &mut z, &mut row);
            let pi = nf.pi1.predict_row(&row);
            let delta = pi - mean;
            mean += delta / (k + 1) as f64;
            m2 += delta * (pi - mean);
        }
        let oracle_var = m2 / (draws - 1) as f64;
        // Binomial sampling noise at n dominates; add the oracle's own error.
        let se = (mean * (1.0 - mean) / n as f64 + oracle_var / draws as f64).sqrt();
        assert!(
            (freq - mean).abs() <= 3.0 * se,
            "freq {freq}, oracle {mean}, se {se}"
        );
    }

    #[test]
    fn covariate_law_checks() {
        let spec = DgpSpec::example1(3, 1.0);
        let n = 100_000;
        let ds = Dataset::generate(&spec, n, 23).unwrap();
        let bound = 4.0 / (n as f64).sqrt();
        for j in 0..3 {
            let mean = (0..n).map(|i| ds.x[(i, j)]).sum::<f64>() / n as f64;
            assert!(mean.abs() < bound, "coordinate {j} mean {mean}");
        }
    }

    #[test]
    fn overlap_is_recorded_and_strictly_interior() {
        let spec = DgpSpec::example1(20, 1.0);
        let ds = Dataset::generate(&spec, 20_000, 5).unwrap();
        let overlap = ds.overlap.unwrap();
        assert!(overlap.min_propensity > 0.0);
        assert!(overlap.max_propensity < 1.0);
        // High-dimensional Example1 pushes a visible mass of propensities
        // outside the comfortable band; the generator must report it.
        assert!(overlap.fraction_outside > 0.0);

        let low = Dataset::generate(&DgpSpec::example1(2, 1.0), 20_000, 5).unwrap();
        assert!(low.overlap.unwrap().fraction_outside < 0.01);
    }

    #[test]
    fn model_mix_form_changes_assignment_law() {
        let base = DgpSpec::example1(2, 1.0);
        let mixed = base.clone().with_propensity_form(PropensityForm::ModelMix);
        let a = Dataset::generate(&base, 2_000, 31).unwrap();
        let b = Dataset::generate(&mixed, 2_000, 31).unwrap();
        assert_ne!(a.d, b.d);
    }
}
