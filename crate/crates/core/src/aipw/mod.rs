//! Cross-fitted augmented inverse-probability-weighting (AIPW) estimation of
//! the average treatment effect, with influence-function confidence intervals.
//!
//! The estimator score for a unit with outcome `y`, treatment `d`, outcome
//! predictions `mu0(x)`, `mu1(x)` and (clipped) treatment probability `pi` is
//!
//! ```text
//! psi = mu1(x) - mu0(x) + (d - pi) * (y - mu_d(x)) / (pi * (1 - pi))
//! ```
//!
//! Nuisance functions are fit on held-out folds: with K >= 2 every fold is
//! scored using nuisances trained on its complement and all scores are pooled;
//! the single-split mode fits on one subsample and scores only the other. The
//! point estimate is the mean score, its standard error the score standard
//! deviation over the square root of the number of scored units.

mod learner;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgp::Dataset;
use crate::error::{Error, Result};
use crate::numeric::mean_sd;
use crate::seed;

pub use learner::{FixedNuisanceLearner, ForestLearner, GlmLearner, NuisanceLearner};

use std::sync::Arc;

/// A fitted predictor usable as a nuisance function.
pub trait Predict: Send + Sync {
    fn predict_row(&self, x: &[f64]) -> f64;
}

/// Constant predictor, useful for deliberately misspecified nuisances.
#[derive(Debug, Clone, Copy)]
pub struct ConstantPredictor(pub f64);

impl Predict for ConstantPredictor {
    fn predict_row(&self, _x: &[f64]) -> f64 {
        self.0
    }
}

/// Fitted outcome regressions and propensity, plus a human-readable
/// description of where they came from.
#[derive(Clone)]
pub struct NuisanceFit {
    pub mu0: Arc<dyn Predict>,
    pub mu1: Arc<dyn Predict>,
    pub pi1: Arc<dyn Predict>,
    pub provenance: String,
}

impl NuisanceFit {
    pub fn new(
        mu0: Box<dyn Predict>,
        mu1: Box<dyn Predict>,
        pi1: Box<dyn Predict>,
        provenance: String,
    ) -> Self {
        NuisanceFit {
            mu0: Arc::from(mu0),
            mu1: Arc::from(mu1),
            pi1: Arc::from(pi1),
            provenance,
        }
    }

    /// Replaces the outcome models with a constant (keeps the propensity).
    pub fn with_constant_mu(mut self, value: f64) -> Self {
        self.mu0 = Arc::new(ConstantPredictor(value));
        self.mu1 = Arc::new(ConstantPredictor(value));
        self.provenance = format!("{} [mu := {value}]", self.provenance);
        self
    }

    /// Replaces the propensity with a constant (keeps the outcome models).
    pub fn with_constant_pi(mut self, value: f64) -> Self {
        self.pi1 = Arc::new(ConstantPredictor(value));
        self.provenance = format!("{} [pi := {value}]", self.provenance);
        self
    }
}

impl std::fmt::Debug for NuisanceFit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NuisanceFit")
            .field("provenance", &self.provenance)
            .finish()
    }
}

/// Assignment of every row to one of `k` cross-fitting folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossFitPlan {
    pub fold_assignment: Vec<usize>,
    pub k: usize,
}

impl CrossFitPlan {
    pub fn folds(&self) -> Vec<Vec<usize>> {
        let mut folds = vec![Vec::new(); self.k];
        for (i, &f) in self.fold_assignment.iter().enumerate() {
            folds[f].push(i);
        }
        folds
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidInput("a cross-fit plan needs k >= 2".into()));
        }
        if self.fold_assignment.iter().any(|&f| f >= self.k) {
            return Err(Error::InvalidInput("fold label out of range".into()));
        }
        let folds = self.folds();
        if folds.iter().any(|f| f.is_empty()) {
            return Err(Error::InvalidInput("every fold must be nonempty".into()));
        }
        Ok(())
    }
}

/// Uniformly random partition of `0..n` into `k` folds whose sizes differ by
/// at most one. Deterministic for a fixed generator state.
pub fn make_folds(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Result<CrossFitPlan> {
    if k < 2 {
        return Err(Error::InvalidInput(format!("k must be >= 2, got {k}")));
    }
    if n < 2 * k {
        return Err(Error::InvalidInput(format!(
            "need n >= 2k for cross-fitting, got n = {n}, k = {k}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut assignment = vec![0usize; n];
    for (pos, &row) in order.iter().enumerate() {
        assignment[row] = pos % k;
    }
    Ok(CrossFitPlan {
        fold_assignment: assignment,
        k,
    })
}

/// Clamps a propensity into the clipping band; the flag reports whether the
/// clamp changed the value.
pub fn clip_propensity(pi: f64, clip: (f64, f64)) -> (f64, bool) {
    let clamped = pi.clamp(clip.0, clip.1);
    (clamped, clamped != pi)
}

fn validate_clip(clip: (f64, f64)) -> Result<()> {
    let (lo, hi) = clip;
    if !(lo.is_finite() && hi.is_finite()) || !(0.0 < lo && lo < hi && hi < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "clip bounds must satisfy 0 < lo < hi < 1, got ({lo}, {hi})"
        )));
    }
    Ok(())
}

/// One evaluated AIPW score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score {
    pub psi: f64,
    /// Whether the propensity was clipped for this unit.
    pub clipped: bool,
}

/// AIPW score for a single unit. `d` must be 0 or 1; the residual is centered
/// on the treated-arm or control-arm outcome prediction according to `d`.
pub fn aipw_score(
    y: f64,
    d: u8,
    mu0x: f64,
    mu1x: f64,
    pi1x: f64,
    clip: (f64, f64),
) -> Result<Score> {
    score_with_center(y, d, mu0x, mu1x, pi1x, clip, ResidualCenter::OutcomeModel)
}

/// What the score residual subtracts from the observed outcome. The
/// conventional estimator centers on the predicted outcome for the realized
/// arm; `PropensityModel` subtracts the realized arm's predicted assignment
/// probability instead and exists only for comparison runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualCenter {
    OutcomeModel,
    PropensityModel,
}

pub fn score_with_center(
    y: f64,
    d: u8,
    mu0x: f64,
    mu1x: f64,
    pi1x: f64,
    clip: (f64, f64),
    center: ResidualCenter,
) -> Result<Score> {
    validate_clip(clip)?;
    if d > 1 {
        return Err(Error::InvalidInput(format!("treatment must be 0 or 1, got {d}")));
    }
    if ![y, mu0x, mu1x, pi1x].iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidInput(
            "non-finite input to the AIPW score".into(),
        ));
    }
    let (pi, clipped) = clip_propensity(pi1x, clip);
    let center_value = match center {
        ResidualCenter::OutcomeModel => {
            if d == 1 {
                mu1x
            } else {
                mu0x
            }
        }
        ResidualCenter::PropensityModel => {
            if d == 1 {
                pi
            } else {
                1.0 - pi
            }
        }
    };
    let psi = (mu1x - mu0x) + (d as f64 - pi) * (y - center_value) / (pi * (1.0 - pi));
    Ok(Score { psi, clipped })
}

/// Regression-only and weighting contributions of one score; their sum is the
/// full score. Zeroing the residual part recovers the plain regression
/// (T-learner) estimate.
pub fn score_parts(
    y: f64,
    d: u8,
    mu0x: f64,
    mu1x: f64,
    pi1x: f64,
    clip: (f64, f64),
) -> Result<(f64, f64)> {
    let full = aipw_score(y, d, mu0x, mu1x, pi1x, clip)?;
    let regression = mu1x - mu0x;
    Ok((regression, full.psi - regression))
}

/// Point estimate with influence-based confidence interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AteEstimate {
    pub tau_hat: f64,
    pub std_error: f64,
    #[serde(rename = "level")]
    pub ci_level: f64,
    /// (lower, upper) confidence bounds.
    pub ci: (f64, f64),
    #[serde(skip)]
    pub influence_values: Vec<f64>,
    pub n_eval: usize,
    pub clip_hits: usize,
    pub learner: String,
    pub k_folds: usize,
    pub seed: u64,
}

impl AteEstimate {
    pub fn covers(&self, truth: f64) -> bool {
        self.ci.0 <= truth && truth <= self.ci.1
    }
}

/// Estimation settings. `k_folds >= 2` scores every fold against nuisances
/// trained on its complement; `k_folds == 1` requires `split_fraction` and
/// runs the single-split protocol (fit on the first part, score the rest).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateOptions {
    pub k_folds: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_fraction: Option<f64>,
    pub clip: (f64, f64),
    pub ci_level: f64,
    #[serde(default = "EstimateOptions::default_center")]
    pub residual_center: ResidualCenter,
    pub seed: u64,
}

impl EstimateOptions {
    fn default_center() -> ResidualCenter {
        ResidualCenter::OutcomeModel
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        validate_clip(self.clip)?;
        if !(0.0 < self.ci_level && self.ci_level < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "ci_level must be in (0, 1), got {}",
                self.ci_level
            )));
        }
        match self.k_folds {
            0 => Err(Error::InvalidParameter("k_folds must be >= 1".into())),
            1 => {
                let f = self.split_fraction.ok_or_else(|| {
                    Error::InvalidParameter(
                        "k_folds = 1 (single split) requires split_fraction".into(),
                    )
                })?;
                if !(0.0 < f && f < 1.0) {
                    return Err(Error::InvalidParameter(format!(
                        "split_fraction must be in (0, 1), got {f}"
                    )));
                }
                if n < 4 {
                    return Err(Error::InvalidInput(format!(
                        "need at least 4 rows for a single split, got {n}"
                    )));
                }
                Ok(())
            }
            k => {
                if self.split_fraction.is_some() {
                    return Err(Error::InvalidParameter(
                        "split_fraction only applies to k_folds = 1".into(),
                    ));
                }
                if n < 2 * k {
                    return Err(Error::InvalidInput(format!(
                        "need n >= 2k, got n = {n}, k = {k}"
                    )));
                }
                Ok(())
            }
        }
    }
}

impl Default for EstimateOptions {
    fn default() -> Self {
        EstimateOptions {
            k_folds: 2,
            split_fraction: None,
            clip: (0.01, 0.99),
            ci_level: 0.95,
            residual_center: ResidualCenter::OutcomeModel,
            seed: 0,
        }
    }
}

/// Training/evaluation groups realized for one run.
struct FoldScheme {
    /// (training rows, evaluation rows) per fold, in fold order.
    groups: Vec<(Vec<usize>, Vec<usize>)>,
}

impl FoldScheme {
    fn from_plan(plan: &CrossFitPlan) -> Self {
        let folds = plan.folds();
        let n = plan.fold_assignment.len();
        let groups = folds
            .iter()
            .enumerate()
            .map(|(k, eval)| {
                let train: Vec<usize> =
                    (0..n).filter(|&i| plan.fold_assignment[i] != k).collect();
                (train, eval.clone())
            })
            .collect();
        FoldScheme { groups }
    }

    fn single_split(n: usize, fraction: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let cut = ((n as f64 * fraction).floor() as usize).clamp(1, n - 1);
        let mut train = order[..cut].to_vec();
        let mut eval = order[cut..].to_vec();
        train.sort_unstable();
        eval.sort_unstable();
        FoldScheme {
            groups: vec![(train, eval)],
        }
    }
}

/// Cross-fitted AIPW estimate on a dataset.
///
/// Data-dependent learner settings are resolved once, on the first fold's
/// training rows, so fold fits can run concurrently without changing results.
pub fn estimate_ate(
    dataset: &Dataset,
    learner: &dyn NuisanceLearner,
    options: &EstimateOptions,
) -> Result<AteEstimate> {
    use rand::SeedableRng;

    let n = dataset.n();
    options.validate(n)?;
    dataset.check_consistency()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed::substream(options.seed, &[seed::purpose::ESTIMATE]));
    let scheme = if options.k_folds == 1 {
        FoldScheme::single_split(n, options.split_fraction.unwrap(), &mut rng)
    } else {
        let plan = make_folds(n, options.k_folds, &mut rng)?;
        FoldScheme::from_plan(&plan)
    };
    estimate_with_scheme(dataset, learner, options, scheme)
}

/// Variant taking an explicit cross-fit plan; used when the caller controls
/// fold membership.
pub fn estimate_ate_with_plan(
    dataset: &Dataset,
    learner: &dyn NuisanceLearner,
    options: &EstimateOptions,
    plan: &CrossFitPlan,
) -> Result<AteEstimate> {
    plan.validate()?;
    if plan.fold_assignment.len() != dataset.n() {
        return Err(Error::InvalidInput(
            "plan length must match the dataset".into(),
        ));
    }
    if plan.k != options.k_folds {
        return Err(Error::InvalidInput(
            "plan fold count must match options.k_folds".into(),
        ));
    }
    options.validate(dataset.n())?;
    dataset.check_consistency()?;
    estimate_with_scheme(dataset, learner, options, FoldScheme::from_plan(plan))
}

fn estimate_with_scheme(
    dataset: &Dataset,
    learner: &dyn NuisanceLearner,
    options: &EstimateOptions,
    scheme: FoldScheme,
) -> Result<AteEstimate> {
    for (fold, (train, _)) in scheme.groups.iter().enumerate() {
        let treated = train.iter().filter(|&&i| dataset.d[i] == 1).count();
        if treated == 0 || treated == train.len() {
            return Err(Error::FoldDegeneracy(format!(
                "training split for fold {fold} has {treated} treated of {} rows",
                train.len()
            )));
        }
    }

    let prepare_seed = seed::substream(options.seed, &[seed::purpose::TUNE]);
    let prepared = learner.prepare(dataset, &scheme.groups[0].0, prepare_seed)?;

    let fold_seeds: Vec<u64> = (0..scheme.groups.len())
        .map(|k| seed::substream(options.seed, &[seed::purpose::ESTIMATE, 1 + k as u64]))
        .collect();

    // Fold fits may run concurrently; results are keyed by row index and
    // sorted afterwards, so scheduling cannot affect the outcome.
    let per_fold: Vec<Result<(String, Vec<(usize, Score)>)>> = scheme
        .groups
        .par_iter()
        .zip(fold_seeds.par_iter())
        .map(|((train, eval), &fold_seed)| {
            let fit = prepared.fit(dataset, train, fold_seed)?;
            let mut row = vec![0.0; dataset.p()];
            let mut scored = Vec::with_capacity(eval.len());
            for &i in eval {
                for j in 0..dataset.p() {
                    row[j] = dataset.x[(i, j)];
                }
                let score = score_with_center(
                    dataset.y[i],
                    dataset.d[i],
                    fit.mu0.predict_row(&row),
                    fit.mu1.predict_row(&row),
                    fit.pi1.predict_row(&row),
                    options.clip,
                    options.residual_center,
                )?;
                scored.push((i, score));
            }
            Ok((fit.provenance.clone(), scored))
        })
        .collect();

    let mut provenance = String::new();
    let mut indexed: Vec<(usize, Score)> = Vec::new();
    for fold in per_fold {
        let (desc, scored) = fold?;
        if provenance.is_empty() {
            provenance = desc;
        }
        indexed.extend(scored);
    }
    indexed.sort_unstable_by_key(|(i, _)| *i);

    let influence: Vec<f64> = indexed.iter().map(|(_, s)| s.psi).collect();
    let clip_hits = indexed.iter().filter(|(_, s)| s.clipped).count();
    let n_eval = influence.len();
    if n_eval < 2 {
        return Err(Error::InvalidInput(
            "need at least two evaluated rows".into(),
        ));
    }
    let (tau_hat, sd) = mean_sd(&influence);
    let std_error = sd / (n_eval as f64).sqrt();
    let z = normal_quantile((1.0 + options.ci_level) / 2.0)?;
    let ci = (tau_hat - z * std_error, tau_hat + z * std_error);

    Ok(AteEstimate {
        tau_hat,
        std_error,
        ci_level: options.ci_level,
        ci,
        influence_values: influence,
        n_eval,
        clip_hits,
        learner: provenance,
        k_folds: options.k_folds,
        seed: options.seed,
    })
}

/// Inverse standard-normal CDF via the rational approximation of Wichura's
/// algorithm AS 241 (PPND16); absolute error below 1e-9 over (0, 1).
pub fn normal_quantile(prob: f64) -> Result<f64> {
    if !(prob.is_finite() && 0.0 < prob && prob < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "probability must be in (0, 1), got {prob}"
        )));
    }
    const A: [f64; 8] = [
        3.387_132_872_796_366_608e0,
        1.331_416_678_917_843_774_5e2,
        1.971_590_950_306_551_442_7e3,
        1.373_169_376_550_946_112_5e4,
        4.592_195_393_154_987_145_7e4,
        6.726_577_092_700_870_085_3e4,
        3.343_057_558_358_812_810_5e4,
        2.509_080_928_730_122_672_7e3,
    ];
    const B: [f64; 7] = [
        4.231_333_070_160_091_125_2e1,
        6.871_870_074_920_579_083e2,
        5.394_196_021_424_751_107_7e3,
        2.121_379_430_158_659_586_7e4,
        3.930_789_580_009_271_061e4,
        2.872_908_573_572_194_267_4e4,
        5.226_495_278_852_854_561e3,
    ];
    const C: [f64; 8] = [
        1.423_437_110_749_683_577_34e0,
        4.630_337_846_156_545_295_9e0,
        5.769_497_221_460_691_405_5e0,
        3.647_848_324_763_204_605_04e0,
        1.270_458_252_452_368_382_58e0,
        2.417_807_251_774_506_117_7e-1,
        2.272_384_498_926_918_458_33e-2,
        7.745_450_142_783_414_076_4e-4,
    ];
    const D: [f64; 7] = [
        2.053_191_626_637_758_821_87e0,
        1.676_384_830_183_803_849_4e0,
        6.897_673_349_851_000_045_5e-1,
        1.481_039_764_274_800_745_9e-1,
        1.519_866_656_361_645_719_66e-2,
        5.475_938_084_995_344_946e-4,
        1.050_750_071_644_416_843_24e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_103_777_2e0,
        5.463_784_911_164_114_369_9e0,
        1.784_826_539_917_291_335_8e0,
        2.965_605_718_285_048_912_3e-1,
        2.653_218_952_657_612_309_3e-2,
        1.242_660_947_388_078_438_6e-3,
        2.711_555_568_743_487_578_15e-5,
        2.010_334_399_292_288_132_65e-7,
    ];
    const F: [f64; 7] = [
        5.998_322_065_558_879_376_9e-1,
        1.369_298_809_227_358_053_1e-1,
        1.487_536_129_085_061_485_25e-2,
        7.868_691_311_456_132_591e-4,
        1.846_318_317_510_054_681_8e-5,
        1.421_511_758_316_445_888_7e-7,
        2.044_263_103_389_939_785_64e-15,
    ];

    #[inline]
    fn ratio(num: &[f64; 8], den: &[f64; 7], r: f64) -> f64 {
        let mut p = num[7];
        for k in (0..7).rev() {
            p = p * r + num[k];
        }
        let mut q = den[6];
        for k in (0..6).rev() {
            q = q * r + den[k];
        }
        p / (q * r + 1.0)
    }

    let q = prob - 0.5;
    let z = if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        q * ratio(&A, &B, r)
    } else {
        let tail = if q < 0.0 { prob } else { 1.0 - prob };
        let mut r = (-tail.ln()).sqrt();
        let unsigned = if r <= 5.0 {
            r -= 1.6;
            ratio(&C, &D, r)
        } else {
            r -= 5.0;
            ratio(&E, &F, r)
        };
        if q < 0.0 {
            -unsigned
        } else {
            unsigned
        }
    };
    Ok(z)
}

#[cfg(test)]
mod tests;
