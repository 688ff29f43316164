//! Monte Carlo coverage experiments.
//!
//! A run sweeps sample sizes for one data-generating process: per cell and
//! replication it derives independent substreams from the master seed,
//! generates a dataset, estimates the treatment effect, and records the error
//! against the true effect and whether the confidence interval covered it.
//! Replications execute in parallel; substream seeding plus a final sort by
//! replication index make every output byte independent of scheduling, so any
//! parallelism level reproduces the same report.

mod report;
mod stats;

use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aipw::{
    estimate_ate, EstimateOptions, FixedNuisanceLearner, ForestLearner, NuisanceLearner,
    ResidualCenter,
};
use crate::dgp::{oracle_nuisances, true_ate, Dataset, DgpSpec};
use crate::error::{Error, Result};
use crate::numeric::{mean_sd, quantile_sorted};
use crate::seed::{self, purpose};

pub use report::{read_report, summary_table, write_report};
pub use stats::{boxplot_stats, coverage, histogram, BoxplotStats, Histogram};

/// Which nuisance learner a run uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerKind {
    /// Honest random forests with optional cross-validated tuning.
    HonestForest {
        #[serde(default = "defaults::num_trees")]
        num_trees: usize,
        #[serde(default = "defaults::yes")]
        tune: bool,
        #[serde(default = "defaults::tuning_trees")]
        tuning_trees: usize,
        #[serde(default = "defaults::cv_folds")]
        cv_folds: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mtry: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        min_leaf: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_depth: Option<usize>,
        #[serde(default = "defaults::subsample_fraction")]
        subsample_fraction: f64,
        #[serde(default = "defaults::honesty_fraction")]
        honesty_fraction: f64,
    },
    /// Per-arm least squares plus logistic propensity.
    Glm {
        #[serde(default = "defaults::yes")]
        intercept: bool,
    },
    /// Exact nuisances from the data-generating process; the constants
    /// replace one side for double-robustness experiments.
    Oracle {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mu_const: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pi_const: Option<f64>,
    },
}

mod defaults {
    pub fn num_trees() -> usize {
        500
    }
    pub fn tuning_trees() -> usize {
        100
    }
    pub fn cv_folds() -> usize {
        5
    }
    pub fn yes() -> bool {
        true
    }
    pub fn subsample_fraction() -> f64 {
        0.5
    }
    pub fn honesty_fraction() -> f64 {
        0.5
    }
}

impl LearnerKind {
    pub fn forest_default() -> Self {
        LearnerKind::HonestForest {
            num_trees: defaults::num_trees(),
            tune: true,
            tuning_trees: defaults::tuning_trees(),
            cv_folds: defaults::cv_folds(),
            mtry: None,
            min_leaf: None,
            max_depth: None,
            subsample_fraction: defaults::subsample_fraction(),
            honesty_fraction: defaults::honesty_fraction(),
        }
    }

    /// Builds a fresh learner instance for one replication.
    pub fn instantiate(&self, spec: &DgpSpec) -> Result<Box<dyn NuisanceLearner>> {
        match self {
            LearnerKind::HonestForest {
                num_trees,
                tune,
                tuning_trees,
                cv_folds,
                mtry,
                min_leaf,
                max_depth,
                subsample_fraction,
                honesty_fraction,
            } => Ok(Box::new(ForestLearner {
                num_trees: *num_trees,
                subsample_fraction: *subsample_fraction,
                honesty_fraction: *honesty_fraction,
                max_depth: *max_depth,
                mtry: *mtry,
                min_leaf: *min_leaf,
                tune: *tune,
                tuning_trees: *tuning_trees,
                cv_folds: *cv_folds,
            })),
            LearnerKind::Glm { intercept } => Ok(Box::new(GlmWrapper {
                intercept: *intercept,
            })),
            LearnerKind::Oracle { mu_const, pi_const } => {
                let mut nf = oracle_nuisances(spec)?;
                if let Some(mu) = mu_const {
                    nf = nf.with_constant_mu(*mu);
                }
                if let Some(pi) = pi_const {
                    nf = nf.with_constant_pi(*pi);
                }
                Ok(Box::new(FixedNuisanceLearner::new(nf)))
            }
        }
    }
}

// Thin alias keeping the public GlmLearner name out of the enum plumbing.
use crate::aipw::GlmLearner as GlmWrapper;

/// Full description of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dgp: DgpSpec,
    pub sample_sizes: Vec<usize>,
    pub replications: usize,
    pub learner: LearnerKind,
    #[serde(default = "defaults_config::k_folds")]
    pub k_folds: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_fraction: Option<f64>,
    #[serde(default = "defaults_config::clip")]
    pub clip: (f64, f64),
    #[serde(default = "defaults_config::ci_level")]
    pub ci_level: f64,
    #[serde(default = "defaults_config::residual_center")]
    pub residual_center: ResidualCenter,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    #[serde(default = "defaults_config::histogram_bins")]
    pub histogram_bins: usize,
}

mod defaults_config {
    use crate::aipw::ResidualCenter;

    pub fn k_folds() -> usize {
        2
    }
    pub fn clip() -> (f64, f64) {
        (0.01, 0.99)
    }
    pub fn ci_level() -> f64 {
        0.95
    }
    pub fn residual_center() -> ResidualCenter {
        ResidualCenter::OutcomeModel
    }
    pub fn histogram_bins() -> usize {
        30
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.dgp.validate()?;
        if self.replications == 0 {
            return Err(Error::InvalidParameter(
                "replications must be >= 1".into(),
            ));
        }
        if self.sample_sizes.is_empty() || self.sample_sizes.iter().any(|&n| n == 0) {
            return Err(Error::InvalidParameter(
                "sample_sizes must be nonempty and positive".into(),
            ));
        }
        if self.histogram_bins == 0 {
            return Err(Error::InvalidParameter(
                "histogram_bins must be >= 1".into(),
            ));
        }
        // Estimation options are validated per sample size at run time; check
        // the smallest one eagerly for fast failure.
        let smallest = *self.sample_sizes.iter().min().unwrap();
        self.estimate_options(0).validate(smallest)?;
        Ok(())
    }

    fn estimate_options(&self, estimate_seed: u64) -> EstimateOptions {
        EstimateOptions {
            k_folds: self.k_folds,
            split_fraction: self.split_fraction,
            clip: self.clip,
            ci_level: self.ci_level,
            residual_center: self.residual_center,
            seed: estimate_seed,
        }
    }
}

/// A replication that produced no estimate, with the reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationFailure {
    pub replication: usize,
    pub reason: String,
}

/// Per-(n, p) aggregate over replications. Vectors are aligned and carry only
/// successful replications (their indices in `reps`); failures are listed
/// separately, never silently dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub n: usize,
    pub p: usize,
    pub true_ate: f64,
    pub reps: Vec<usize>,
    pub estimates: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub errors: Vec<f64>,
    pub ci_lo: Vec<f64>,
    pub ci_hi: Vec<f64>,
    pub covered: Vec<bool>,
    pub clip_hits: Vec<usize>,
    pub coverage_pct: f64,
    pub median_error: f64,
    pub mean_error: f64,
    pub sd_error: f64,
    pub failures: Vec<ReplicationFailure>,
}

impl CellResult {
    pub fn excluded(&self) -> usize {
        self.failures.len()
    }
}

/// Plot-ready summaries of one cell's error distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub n: usize,
    pub p: usize,
    pub histogram: Histogram,
    pub boxplot: BoxplotStats,
}

/// Everything a run produced; serializes to `report.json` byte-for-byte
/// deterministically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub config: ExperimentConfig,
    pub cells: Vec<CellResult>,
    pub summaries: Vec<CellSummary>,
}

/// Wall-clock timings, reported separately so they never touch the
/// deterministic artifacts.
#[derive(Debug, Clone, PartialEq)]
pub struct CellTiming {
    pub n: usize,
    pub p: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: CoverageReport,
    pub timings: Vec<CellTiming>,
}

enum RepOutcome {
    Ok {
        rep: usize,
        tau_hat: f64,
        std_error: f64,
        ci: (f64, f64),
        covered: bool,
        clip_hits: usize,
    },
    Failed {
        rep: usize,
        reason: String,
    },
}

/// Runs the experiment on the current rayon pool. `parallelism` caps worker
/// threads when positive; results do not depend on it.
pub fn run_experiment(config: &ExperimentConfig, parallelism: usize) -> Result<RunOutcome> {
    config.validate()?;
    if parallelism > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallelism)
            .build()
            .map_err(|e| Error::InvalidInput(format!("cannot build thread pool: {e}")))?;
        pool.install(|| run_on_current_pool(config))
    } else {
        run_on_current_pool(config)
    }
}

fn run_on_current_pool(config: &ExperimentConfig) -> Result<RunOutcome> {
    let truth = true_ate(&config.dgp);
    let mut cells = Vec::new();
    let mut summaries = Vec::new();
    let mut timings = Vec::new();

    for (cell_idx, &n) in config.sample_sizes.iter().enumerate() {
        let started = Instant::now();
        let outcomes: Vec<RepOutcome> = (0..config.replications)
            .into_par_iter()
            .map(|rep| run_replication(config, cell_idx, rep, n, truth))
            .collect();
        let seconds = started.elapsed().as_secs_f64();

        let mut cell = CellResult {
            n,
            p: config.dgp.p,
            true_ate: truth,
            reps: Vec::new(),
            estimates: Vec::new(),
            std_errors: Vec::new(),
            errors: Vec::new(),
            ci_lo: Vec::new(),
            ci_hi: Vec::new(),
            covered: Vec::new(),
            clip_hits: Vec::new(),
            coverage_pct: 0.0,
            median_error: 0.0,
            mean_error: 0.0,
            sd_error: 0.0,
            failures: Vec::new(),
        };
        // Outcomes arrive ordered by replication index (ordered collect);
        // aggregation below is therefore scheduling-independent.
        for outcome in outcomes {
            match outcome {
                RepOutcome::Ok {
                    rep,
                    tau_hat,
                    std_error,
                    ci,
                    covered,
                    clip_hits,
                } => {
                    cell.reps.push(rep);
                    cell.estimates.push(tau_hat);
                    cell.std_errors.push(std_error);
                    cell.errors.push(tau_hat - truth);
                    cell.ci_lo.push(ci.0);
                    cell.ci_hi.push(ci.1);
                    cell.covered.push(covered);
                    cell.clip_hits.push(clip_hits);
                }
                RepOutcome::Failed { rep, reason } => {
                    cell.failures.push(ReplicationFailure {
                        replication: rep,
                        reason,
                    });
                }
            }
        }
        if cell.estimates.is_empty() {
            return Err(Error::InvalidInput(format!(
                "every replication failed for n = {n}; first reason: {}",
                cell.failures
                    .first()
                    .map(|f| f.reason.as_str())
                    .unwrap_or("unknown")
            )));
        }

        cell.coverage_pct =
            100.0 * cell.covered.iter().filter(|&&c| c).count() as f64 / cell.covered.len() as f64;
        let mut sorted = cell.errors.clone();
        sorted.sort_by(f64::total_cmp);
        cell.median_error = quantile_sorted(&sorted, 0.5);
        let (mean, sd) = mean_sd(&cell.errors);
        cell.mean_error = mean;
        cell.sd_error = sd;

        summaries.push(CellSummary {
            n,
            p: config.dgp.p,
            histogram: histogram(&cell.errors, config.histogram_bins)?,
            boxplot: boxplot_stats(&cell.errors)?,
        });
        timings.push(CellTiming {
            n,
            p: config.dgp.p,
            seconds,
        });
        cells.push(cell);
    }

    Ok(RunOutcome {
        report: CoverageReport {
            config: config.clone(),
            cells,
            summaries,
        },
        timings,
    })
}

fn run_replication(
    config: &ExperimentConfig,
    cell_idx: usize,
    rep: usize,
    n: usize,
    truth: f64,
) -> RepOutcome {
    let dataset_seed = seed::substream(
        config.master_seed,
        &[purpose::DATASET, cell_idx as u64, rep as u64],
    );
    let estimate_seed = seed::substream(
        config.master_seed,
        &[purpose::ESTIMATE, cell_idx as u64, rep as u64],
    );
    let attempt = || -> Result<RepOutcome> {
        let dataset = Dataset::generate(&config.dgp, n, dataset_seed)?;
        let learner = config.learner.instantiate(&config.dgp)?;
        let estimate = estimate_ate(
            &dataset,
            learner.as_ref(),
            &config.estimate_options(estimate_seed),
        )?;
        Ok(RepOutcome::Ok {
            rep,
            tau_hat: estimate.tau_hat,
            std_error: estimate.std_error,
            ci: estimate.ci,
            covered: estimate.covers(truth),
            clip_hits: estimate.clip_hits,
        })
    };
    attempt().unwrap_or_else(|e| RepOutcome::Failed {
        rep,
        reason: e.to_string(),
    })
}

/// Built-in experiment configurations.
///
/// Paper-scale presets sweep n = 1000/2000/6000; `example1-small` is the
/// reduced check (n = 500/1000, 100 replications) meant to finish within
/// minutes, and `example2-p200-desk` caps the high-dimensional sweep at
/// n = 2000 with 100 replications.
pub fn preset(name: &str) -> Option<ExperimentConfig> {
    let forest = LearnerKind::forest_default;
    let base = |dgp: DgpSpec, sizes: Vec<usize>, reps: usize, learner: LearnerKind, dir: &str| {
        ExperimentConfig {
            dgp,
            sample_sizes: sizes,
            replications: reps,
            learner,
            k_folds: 2,
            split_fraction: None,
            clip: (0.01, 0.99),
            ci_level: 0.95,
            residual_center: ResidualCenter::OutcomeModel,
            master_seed: 20260810,
            output_dir: PathBuf::from(format!("reports/{dir}")),
            histogram_bins: 30,
        }
    };
    match name {
        "example1-small" => Some(base(
            DgpSpec::example1(2, 1.0),
            vec![500, 1000],
            100,
            forest(),
            "example1-small",
        )),
        "example1-p2" => Some(base(
            DgpSpec::example1(2, 1.0),
            vec![1000, 2000, 6000],
            200,
            forest(),
            "example1-p2",
        )),
        "example1-p20" => Some(base(
            DgpSpec::example1(20, 1.0),
            vec![1000, 2000, 6000],
            200,
            forest(),
            "example1-p20",
        )),
        "example2-p200" => Some(base(
            DgpSpec::example2(200, 1.0),
            vec![1000, 2000, 6000],
            1000,
            forest(),
            "example2-p200",
        )),
        "example2-p200-desk" => Some(base(
            DgpSpec::example2(200, 1.0),
            vec![1000, 2000],
            100,
            forest(),
            "example2-p200-desk",
        )),
        "oracle-example1" => Some(base(
            DgpSpec::example1(2, 1.0),
            vec![1000],
            500,
            LearnerKind::Oracle {
                mu_const: None,
                pi_const: None,
            },
            "oracle-example1",
        )),
        "glm-example2" => Some(base(
            DgpSpec::example2(10, 1.0),
            vec![4000],
            500,
            LearnerKind::Glm { intercept: true },
            "glm-example2",
        )),
        _ => None,
    }
}

/// Names accepted by [`preset`].
pub const PRESET_NAMES: [&str; 7] = [
    "example1-small",
    "example1-p2",
    "example1-p20",
    "example2-p200",
    "example2-p200-desk",
    "oracle-example1",
    "glm-example2",
];

#[cfg(test)]
mod tests;
