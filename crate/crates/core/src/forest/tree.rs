//! Honest tree construction.
//!
//! Each tree draws a subsample without replacement and divides it into a
//! structure half and an estimation half. Splits are chosen on the structure
//! half only (variance reduction over a random feature subset); leaf values
//! are means of estimation-half responses routed through the fixed structure.
//! A leaf that receives no estimation rows inherits the nearest ancestor mean
//! and is counted in the forest's diagnostics.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::numeric::streaming_mean;

use super::split::best_split_cols;
use super::ForestParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        value: f64,
        /// Estimation-half rows that populated this leaf (0 when inherited).
        count: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    /// Routes a row to its leaf value (left on `x[f] <= threshold`).
    #[inline]
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let mut idx = 0usize;
        loop {
            match &self.nodes[idx] {
                Node::Leaf { value, .. } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    idx = if x[*feature as usize] <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
            }
        }
    }
}

/// Which rows a tree used for which half; recorded by the instrumented fit.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeProvenance {
    pub structure_rows: Vec<usize>,
    pub estimation_rows: Vec<usize>,
}

pub(super) struct BuiltTree {
    pub tree: Tree,
    pub provenance: TreeProvenance,
    pub empty_leaves: usize,
}

/// Partitions `rows` in place by the split predicate; returns the boundary.
/// Deterministic (stable order is not required downstream, but the same input
/// always produces the same layout).
fn partition_rows(rows: &mut [usize], col: &[f64], threshold: f64) -> usize {
    let mut lo = 0;
    let mut hi = rows.len();
    while lo < hi {
        if col[rows[lo]] <= threshold {
            lo += 1;
        } else {
            hi -= 1;
            rows.swap(lo, hi);
        }
    }
    lo
}

struct TreeBuilder<'a> {
    cols: &'a [&'a [f64]],
    y: &'a [f64],
    params: &'a ForestParams,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
    feature_pool: Vec<usize>,
    candidate_buf: Vec<usize>,
    scratch: Vec<(f64, f64)>,
    empty_leaves: usize,
}

impl<'a> TreeBuilder<'a> {
    fn grow(&mut self, rows: &mut [usize], depth: usize) -> u32 {
        let at_depth_limit = self
            .params
            .max_depth
            .is_some_and(|limit| depth >= limit);
        if !at_depth_limit && rows.len() >= 2 * self.params.min_leaf {
            if let Some(split) = self.choose_split(rows) {
                let col = self.cols[split.feature];
                let boundary = partition_rows(rows, col, split.threshold);
                debug_assert!(boundary >= self.params.min_leaf);
                debug_assert!(rows.len() - boundary >= self.params.min_leaf);
                let idx = self.nodes.len();
                self.nodes.push(Node::Split {
                    feature: split.feature as u32,
                    threshold: split.threshold,
                    left: 0,
                    right: 0,
                });
                let (left_rows, right_rows) = rows.split_at_mut(boundary);
                let left = self.grow(left_rows, depth + 1);
                let right = self.grow(right_rows, depth + 1);
                if let Node::Split {
                    left: l, right: r, ..
                } = &mut self.nodes[idx]
                {
                    *l = left;
                    *r = right;
                }
                return idx as u32;
            }
        }
        let idx = self.nodes.len();
        self.nodes.push(Node::Leaf {
            value: 0.0,
            count: 0,
        });
        idx as u32
    }

    fn choose_split(&mut self, rows: &[usize]) -> Option<super::split::SplitCandidate> {
        let p = self.cols.len();
        let mtry = self.params.mtry.min(p);
        // Partial Fisher-Yates, then sort so tie-breaking is by feature index.
        self.candidate_buf.clear();
        if mtry == p {
            self.candidate_buf.extend(0..p);
        } else {
            for k in 0..mtry {
                let j = self.rng.random_range(k..p);
                self.feature_pool.swap(k, j);
                self.candidate_buf.push(self.feature_pool[k]);
            }
            self.candidate_buf.sort_unstable();
        }
        let cand = std::mem::take(&mut self.candidate_buf);
        let result = best_split_cols(
            self.cols,
            self.y,
            rows,
            &cand,
            self.params.min_leaf,
            &mut self.scratch,
        );
        self.candidate_buf = cand;
        result
    }

    /// Fills leaf values from estimation rows. Each node's estimation mean
    /// flows down as the fallback for descendants that end up empty.
    fn assign_leaf_values(&mut self, node: usize, rows: &mut [usize], inherited: f64) {
        let mean_here = if rows.is_empty() {
            inherited
        } else {
            streaming_mean(rows.iter().map(|&i| self.y[i]))
        };
        match self.nodes[node] {
            Node::Leaf { .. } => {
                if rows.is_empty() {
                    self.empty_leaves += 1;
                }
                self.nodes[node] = Node::Leaf {
                    value: mean_here,
                    count: rows.len() as u32,
                };
            }
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                let boundary = partition_rows(rows, self.cols[feature as usize], threshold);
                let (left_rows, right_rows) = rows.split_at_mut(boundary);
                self.assign_leaf_values(left as usize, left_rows, mean_here);
                self.assign_leaf_values(right as usize, right_rows, mean_here);
            }
        }
    }
}

/// Builds one honest tree from its private generator.
pub(super) fn build_tree(
    cols: &[&[f64]],
    y: &[f64],
    params: &ForestParams,
    mut rng: ChaCha8Rng,
) -> BuiltTree {
    let n = y.len();
    let subsample_size = ((params.subsample_fraction * n as f64).floor() as usize).clamp(2, n);
    // Partial Fisher-Yates draw of the subsample, without replacement.
    let mut pool: Vec<usize> = (0..n).collect();
    for k in 0..subsample_size {
        let j = rng.random_range(k..n);
        pool.swap(k, j);
    }
    let n_structure =
        ((params.honesty_fraction * subsample_size as f64).floor() as usize)
            .clamp(1, subsample_size - 1);
    let mut structure = pool[..n_structure].to_vec();
    let mut estimation = pool[n_structure..subsample_size].to_vec();

    let mut builder = TreeBuilder {
        cols,
        y,
        params,
        rng,
        nodes: Vec::new(),
        feature_pool: (0..cols.len()).collect(),
        candidate_buf: Vec::with_capacity(params.mtry),
        scratch: Vec::with_capacity(n_structure),
        empty_leaves: 0,
    };
    let root = builder.grow(&mut structure, 0);
    debug_assert_eq!(root, 0);
    // The root always sees the full estimation half, which is nonempty, so
    // the initial fallback value is never observable.
    builder.assign_leaf_values(0, &mut estimation, 0.0);

    structure.sort_unstable();
    estimation.sort_unstable();
    BuiltTree {
        tree: Tree {
            nodes: builder.nodes,
        },
        provenance: TreeProvenance {
            structure_rows: structure,
            estimation_rows: estimation,
        },
        empty_leaves: builder.empty_leaves,
    }
}
