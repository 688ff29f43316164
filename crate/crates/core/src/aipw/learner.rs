//! Nuisance learners: how the outcome regressions and the propensity are fit
//! on a training split.

use nalgebra::DMatrix;
use rand_chacha::ChaCha8Rng;

use crate::dgp::Dataset;
use crate::error::{Error, Result};
use crate::forest::{cv_tune, default_grid, fit_forest, ForestParams, ForestTask};
use crate::glm::{fit_logistic, fit_ols, LogisticOptions};
use crate::seed;

use super::NuisanceFit;

/// Fits the three nuisance functions on a set of training rows.
///
/// `prepare` runs once per estimate, before any fold is fit, and resolves
/// data-dependent choices (hyperparameter tuning); the returned learner is
/// then used for every fold so fold execution order cannot matter.
pub trait NuisanceLearner: Send + Sync {
    fn prepare(
        &self,
        data: &Dataset,
        train_rows: &[usize],
        tune_seed: u64,
    ) -> Result<Box<dyn NuisanceLearner>> {
        let _ = (data, train_rows, tune_seed);
        Ok(self.boxed_clone())
    }

    fn fit(&self, data: &Dataset, train_rows: &[usize], fit_seed: u64) -> Result<NuisanceFit>;

    fn describe(&self) -> String;

    fn boxed_clone(&self) -> Box<dyn NuisanceLearner>;
}

fn gather_x(data: &Dataset, rows: &[usize]) -> DMatrix<f64> {
    let p = data.p();
    let mut x = DMatrix::zeros(rows.len(), p);
    for (r, &i) in rows.iter().enumerate() {
        for j in 0..p {
            x[(r, j)] = data.x[(i, j)];
        }
    }
    x
}

fn arm_rows(data: &Dataset, rows: &[usize], arm: u8) -> Vec<usize> {
    rows.iter().copied().filter(|&i| data.d[i] == arm).collect()
}

/// Returns predetermined nuisance functions regardless of the training data.
/// Wraps the exact oracle from the data-generating process, optionally with
/// deliberately misspecified components for robustness experiments.
#[derive(Clone)]
pub struct FixedNuisanceLearner {
    nuisances: NuisanceFit,
}

impl FixedNuisanceLearner {
    pub fn new(nuisances: NuisanceFit) -> Self {
        FixedNuisanceLearner { nuisances }
    }
}

impl NuisanceLearner for FixedNuisanceLearner {
    fn fit(&self, _data: &Dataset, _train_rows: &[usize], _fit_seed: u64) -> Result<NuisanceFit> {
        Ok(self.nuisances.clone())
    }

    fn describe(&self) -> String {
        self.nuisances.provenance.clone()
    }

    fn boxed_clone(&self) -> Box<dyn NuisanceLearner> {
        Box::new(self.clone())
    }
}

/// Correctly-specified parametric baseline: per-arm least squares for the
/// outcomes, Newton/IRLS logistic for the propensity.
#[derive(Debug, Clone)]
pub struct GlmLearner {
    pub intercept: bool,
}

impl Default for GlmLearner {
    fn default() -> Self {
        GlmLearner { intercept: true }
    }
}

impl NuisanceLearner for GlmLearner {
    fn fit(&self, data: &Dataset, train_rows: &[usize], _fit_seed: u64) -> Result<NuisanceFit> {
        let controls = arm_rows(data, train_rows, 0);
        let treated = arm_rows(data, train_rows, 1);

        let x0 = gather_x(data, &controls);
        let y0: Vec<f64> = controls.iter().map(|&i| data.y[i]).collect();
        let mu0 = fit_ols(&x0, &y0, self.intercept)?;

        let x1 = gather_x(data, &treated);
        let y1: Vec<f64> = treated.iter().map(|&i| data.y[i]).collect();
        let mu1 = fit_ols(&x1, &y1, self.intercept)?;

        let xt = gather_x(data, train_rows);
        let dt: Vec<u8> = train_rows.iter().map(|&i| data.d[i]).collect();
        let pi = fit_logistic(
            &xt,
            &dt,
            &LogisticOptions {
                intercept: self.intercept,
                ..LogisticOptions::default()
            },
        )?;

        Ok(NuisanceFit::new(
            Box::new(mu0),
            Box::new(mu1),
            Box::new(pi),
            self.describe(),
        ))
    }

    fn describe(&self) -> String {
        format!("glm(intercept={})", self.intercept)
    }

    fn boxed_clone(&self) -> Box<dyn NuisanceLearner> {
        Box::new(self.clone())
    }
}

/// Honest-forest nuisances: per-arm regression forests for the outcomes and a
/// probability forest on the treatment labels.
#[derive(Debug, Clone)]
pub struct ForestLearner {
    pub num_trees: usize,
    pub subsample_fraction: f64,
    pub honesty_fraction: f64,
    pub max_depth: Option<usize>,
    /// Fixed values skip tuning for that knob (both set disables tuning).
    pub mtry: Option<usize>,
    pub min_leaf: Option<usize>,
    /// Tune (mtry, min_leaf) by cross-validation during `prepare`.
    pub tune: bool,
    /// Tree count used for the tuning fits only.
    pub tuning_trees: usize,
    pub cv_folds: usize,
}

impl Default for ForestLearner {
    fn default() -> Self {
        ForestLearner {
            num_trees: 500,
            subsample_fraction: 0.5,
            honesty_fraction: 0.5,
            max_depth: None,
            mtry: None,
            min_leaf: None,
            tune: true,
            tuning_trees: 100,
            cv_folds: 5,
        }
    }
}

impl ForestLearner {
    fn base_params(&self, p: usize) -> ForestParams {
        let defaults = ForestParams::defaults_for(p);
        ForestParams {
            num_trees: self.num_trees,
            mtry: self.mtry.unwrap_or(defaults.mtry).clamp(1, p),
            min_leaf: self.min_leaf.unwrap_or(defaults.min_leaf),
            subsample_fraction: self.subsample_fraction,
            honesty_fraction: self.honesty_fraction,
            max_depth: self.max_depth,
            seed: 0,
        }
    }

    /// Tuning grid restricted to the knobs left free.
    fn grid(&self, p: usize) -> Vec<ForestParams> {
        let base = ForestParams {
            num_trees: self.tuning_trees,
            ..self.base_params(p)
        };
        match (self.mtry, self.min_leaf) {
            (None, None) => default_grid(p, &base),
            _ => {
                let mtries = match self.mtry {
                    Some(m) => vec![m.clamp(1, p)],
                    None => {
                        let mut v = vec![
                            (p as f64).sqrt().ceil() as usize,
                            (p as f64 / 3.0).ceil() as usize,
                            p,
                        ];
                        v.sort_unstable();
                        v.dedup();
                        v
                    }
                };
                let min_leaves = match self.min_leaf {
                    Some(l) => vec![l],
                    None => vec![5, 20, 50],
                };
                let mut grid = Vec::new();
                for &mtry in &mtries {
                    for &min_leaf in &min_leaves {
                        grid.push(ForestParams {
                            mtry: mtry.clamp(1, p),
                            min_leaf,
                            ..base.clone()
                        });
                    }
                }
                grid
            }
        }
    }
}

/// Forest learner after tuning: concrete parameters per nuisance.
#[derive(Debug, Clone)]
struct TunedForestLearner {
    mu0: ForestParams,
    mu1: ForestParams,
    pi: ForestParams,
    description: String,
}

impl NuisanceLearner for ForestLearner {
    fn prepare(
        &self,
        data: &Dataset,
        train_rows: &[usize],
        tune_seed: u64,
    ) -> Result<Box<dyn NuisanceLearner>> {
        use rand::SeedableRng;

        let p = data.p();
        let full = |params: &ForestParams| ForestParams {
            num_trees: self.num_trees,
            ..params.clone()
        };

        if !self.tune || (self.mtry.is_some() && self.min_leaf.is_some()) {
            let params = self.base_params(p);
            return Ok(Box::new(TunedForestLearner {
                mu0: params.clone(),
                mu1: params.clone(),
                pi: params.clone(),
                description: format!(
                    "honest_forest(trees={}, mtry={}, min_leaf={})",
                    params.num_trees, params.mtry, params.min_leaf
                ),
            }));
        }

        let grid = self.grid(p);
        let targets: [(&str, Vec<usize>, ForestTask, Box<dyn Fn(usize) -> f64>); 3] = [
            (
                "mu0",
                arm_rows(data, train_rows, 0),
                ForestTask::Regression,
                Box::new(|i| data.y[i]),
            ),
            (
                "mu1",
                arm_rows(data, train_rows, 1),
                ForestTask::Regression,
                Box::new(|i| data.y[i]),
            ),
            (
                "pi",
                train_rows.to_vec(),
                ForestTask::Probability,
                Box::new(|i| data.d[i] as f64),
            ),
        ];

        let mut picked = Vec::with_capacity(3);
        for (slot, (name, rows, task, response)) in targets.into_iter().enumerate() {
            if rows.len() < self.cv_folds.max(4) {
                return Err(Error::InvalidInput(format!(
                    "too few rows ({}) to tune the {name} forest",
                    rows.len()
                )));
            }
            let x = gather_x(data, &rows);
            let y: Vec<f64> = rows.iter().map(|&i| response(i)).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed::substream(
                tune_seed,
                &[seed::purpose::TUNE, slot as u64],
            ));
            picked.push(cv_tune(&x, &y, task, &grid, self.cv_folds, &mut rng)?);
        }

        let description = format!(
            "honest_forest(trees={}, tuned mtry/min_leaf: mu0={}/{}, mu1={}/{}, pi={}/{})",
            self.num_trees,
            picked[0].mtry,
            picked[0].min_leaf,
            picked[1].mtry,
            picked[1].min_leaf,
            picked[2].mtry,
            picked[2].min_leaf
        );
        Ok(Box::new(TunedForestLearner {
            mu0: full(&picked[0]),
            mu1: full(&picked[1]),
            pi: full(&picked[2]),
            description,
        }))
    }

    fn fit(&self, data: &Dataset, train_rows: &[usize], fit_seed: u64) -> Result<NuisanceFit> {
        // Untuned direct fit; estimates normally go through `prepare` first.
        let params = self.base_params(data.p());
        TunedForestLearner {
            mu0: params.clone(),
            mu1: params.clone(),
            pi: params,
            description: self.describe(),
        }
        .fit(data, train_rows, fit_seed)
    }

    fn describe(&self) -> String {
        format!(
            "honest_forest(trees={}, tune={})",
            self.num_trees, self.tune
        )
    }

    fn boxed_clone(&self) -> Box<dyn NuisanceLearner> {
        Box::new(self.clone())
    }
}

impl NuisanceLearner for TunedForestLearner {
    fn fit(&self, data: &Dataset, train_rows: &[usize], fit_seed: u64) -> Result<NuisanceFit> {
        let controls = arm_rows(data, train_rows, 0);
        let treated = arm_rows(data, train_rows, 1);

        let x0 = gather_x(data, &controls);
        let y0: Vec<f64> = controls.iter().map(|&i| data.y[i]).collect();
        let mu0 = fit_forest(
            &x0,
            &y0,
            &self.mu0.clone().with_seed(seed::substream(fit_seed, &[0])),
            ForestTask::Regression,
        )?;

        let x1 = gather_x(data, &treated);
        let y1: Vec<f64> = treated.iter().map(|&i| data.y[i]).collect();
        let mu1 = fit_forest(
            &x1,
            &y1,
            &self.mu1.clone().with_seed(seed::substream(fit_seed, &[1])),
            ForestTask::Regression,
        )?;

        let xt = gather_x(data, train_rows);
        let dt: Vec<f64> = train_rows.iter().map(|&i| data.d[i] as f64).collect();
        let pi = fit_forest(
            &xt,
            &dt,
            &self.pi.clone().with_seed(seed::substream(fit_seed, &[2])),
            ForestTask::Probability,
        )?;

        Ok(NuisanceFit::new(
            Box::new(mu0),
            Box::new(mu1),
            Box::new(pi),
            self.description.clone(),
        ))
    }

    fn describe(&self) -> String {
        self.description.clone()
    }

    fn boxed_clone(&self) -> Box<dyn NuisanceLearner> {
        Box::new(self.clone())
    }
}
