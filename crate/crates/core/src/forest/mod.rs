//! Honest random forest for regression and probability estimation.
//!
//! Trees are grown on independent subsamples drawn without replacement. Each
//! subsample is split into a structure half that chooses splits by CART
//! variance reduction over `mtry` random candidate features, and an estimation
//! half whose responses populate the leaf means, so no response used to pick a
//! split ever enters a prediction. Forest predictions average the per-tree
//! leaf values; probability forests (0/1 responses) clamp to [0, 1].
//!
//! Fitting is deterministic given `params.seed` regardless of thread count:
//! every tree derives its own generator from the seed and the tree index.

mod cv;
mod split;
mod tree;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aipw::Predict;
use crate::error::{Error, Result};
use crate::seed;

pub use cv::{cv_tune, default_grid};
pub use split::{best_split, enumerate_splits, SplitCandidate};
pub use tree::{Node, Tree, TreeProvenance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForestTask {
    Regression,
    /// Leaf-frequency estimation of a binary response.
    Probability,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestParams {
    pub num_trees: usize,
    /// Candidate features per split.
    pub mtry: usize,
    /// Minimum structure-half rows per child.
    pub min_leaf: usize,
    /// Fraction of rows subsampled (without replacement) per tree.
    pub subsample_fraction: f64,
    /// Fraction of each subsample used for split selection; the rest fills
    /// leaf values.
    pub honesty_fraction: f64,
    pub max_depth: Option<usize>,
    pub seed: u64,
}

impl ForestParams {
    /// Untuned defaults: 500 trees, mtry = ceil(sqrt(p)), min_leaf 5, half
    /// subsampling, even honesty split.
    pub fn defaults_for(p: usize) -> Self {
        ForestParams {
            num_trees: 500,
            mtry: (p as f64).sqrt().ceil() as usize,
            min_leaf: 5,
            subsample_fraction: 0.5,
            honesty_fraction: 0.5,
            max_depth: None,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if self.num_trees == 0 {
            return Err(Error::InvalidParameter("num_trees must be >= 1".into()));
        }
        if self.mtry == 0 || self.mtry > p {
            return Err(Error::InvalidParameter(format!(
                "mtry must be in [1, {p}], got {}",
                self.mtry
            )));
        }
        if self.min_leaf == 0 {
            return Err(Error::InvalidParameter("min_leaf must be >= 1".into()));
        }
        if !(0.0 < self.subsample_fraction && self.subsample_fraction <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "subsample_fraction must be in (0, 1], got {}",
                self.subsample_fraction
            )));
        }
        if !(0.0 < self.honesty_fraction && self.honesty_fraction < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "honesty_fraction must be in (0, 1), got {}",
                self.honesty_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Tree>,
    pub params: ForestParams,
    pub task: ForestTask,
    pub n_features: usize,
    /// Leaves that received no estimation rows and inherited an ancestor
    /// value, summed over trees.
    pub empty_leaves: usize,
}

/// Column views over a dense matrix (nalgebra stores column-major).
fn column_slices(x: &DMatrix<f64>) -> Vec<&[f64]> {
    let n = x.nrows();
    let data = x.as_slice();
    (0..x.ncols()).map(|j| &data[j * n..(j + 1) * n]).collect()
}

pub fn fit_forest(
    x: &DMatrix<f64>,
    y: &[f64],
    params: &ForestParams,
    task: ForestTask,
) -> Result<Forest> {
    Ok(fit_forest_instrumented(x, y, params, task)?.0)
}

/// Fit that also reports which rows each tree used for structure and
/// estimation, for honesty audits.
pub fn fit_forest_instrumented(
    x: &DMatrix<f64>,
    y: &[f64],
    params: &ForestParams,
    task: ForestTask,
) -> Result<(Forest, Vec<TreeProvenance>)> {
    let n = x.nrows();
    let p = x.ncols();
    if n == 0 || p == 0 {
        return Err(Error::InvalidInput("empty training data".into()));
    }
    if y.len() != n {
        return Err(Error::InvalidInput(format!(
            "y has length {}, expected {n}",
            y.len()
        )));
    }
    params.validate(p)?;
    if n < 2 * params.min_leaf.max(1) {
        return Err(Error::InvalidInput(format!(
            "need n >= {} rows for min_leaf = {}, got {n}",
            2 * params.min_leaf,
            params.min_leaf
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite response".into()));
    }
    if task == ForestTask::Probability && y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidInput(
            "probability task requires 0/1 responses".into(),
        ));
    }

    let cols = column_slices(x);
    let built: Vec<tree::BuiltTree> = (0..params.num_trees)
        .into_par_iter()
        .map(|t| {
            let rng = seed::rng_for(params.seed, &[seed::purpose::TREE, t as u64]);
            tree::build_tree(&cols, y, params, rng)
        })
        .collect();

    let mut trees = Vec::with_capacity(built.len());
    let mut provenance = Vec::with_capacity(built.len());
    let mut empty_leaves = 0;
    for b in built {
        trees.push(b.tree);
        provenance.push(b.provenance);
        empty_leaves += b.empty_leaves;
    }
    Ok((
        Forest {
            trees,
            params: params.clone(),
            task,
            n_features: p,
            empty_leaves,
        },
        provenance,
    ))
}

impl Forest {
    /// Average of per-tree leaf values (streaming mean, so a constant response
    /// predicts exactly that constant); probability forests clamp to [0, 1].
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let mut mean = 0.0;
        for (t, tree) in self.trees.iter().enumerate() {
            let v = tree.predict_row(x);
            mean += (v - mean) / (t + 1) as f64;
        }
        if self.task == ForestTask::Probability {
            mean = mean.clamp(0.0, 1.0);
        }
        mean
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.n_features {
            return Err(Error::InvalidInput(format!(
                "forest was trained on {} features, got {}",
                self.n_features,
                x.ncols()
            )));
        }
        let n = x.nrows();
        let mut row = vec![0.0; self.n_features];
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            for j in 0..self.n_features {
                row[j] = x[(i, j)];
            }
            out.push(self.predict_row(&row));
        }
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ForestDocument {
            version: FOREST_DOCUMENT_VERSION,
            forest: self.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Forest> {
        let doc: ForestDocument = serde_json::from_str(text)?;
        if doc.version != FOREST_DOCUMENT_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported forest document version {}",
                doc.version
            )));
        }
        Ok(doc.forest)
    }
}

impl Predict for Forest {
    fn predict_row(&self, x: &[f64]) -> f64 {
        Forest::predict_row(self, x)
    }
}

const FOREST_DOCUMENT_VERSION: u32 = 1;

/// Versioned serialization wrapper for reproducibility snapshots.
#[derive(Debug, Serialize, Deserialize)]
struct ForestDocument {
    version: u32,
    #[serde(flatten)]
    forest: Forest,
}
