//! CART variance-reduction split search.

use nalgebra::DMatrix;

/// A chosen split. `score` is the variance reduction: parent variance minus
/// the size-weighted child variances, all computed on the rows searched.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    pub threshold: f64,
    pub score: f64,
}

/// Best split over the given rows and candidate features.
///
/// Candidate thresholds are midpoints between consecutive distinct sorted
/// values of each feature. A split is admissible when both children keep at
/// least `min_leaf` rows. Returns `None` when no admissible split reduces
/// variance. Ties are broken toward the lowest feature index, then the lowest
/// threshold; `features` is scanned in ascending order to make that hold.
pub(crate) fn best_split_cols(
    cols: &[&[f64]],
    y: &[f64],
    rows: &[usize],
    features: &[usize],
    min_leaf: usize,
    scratch: &mut Vec<(f64, f64)>,
) -> Option<SplitCandidate> {
    let m = rows.len();
    if m < 2 * min_leaf.max(1) {
        return None;
    }
    debug_assert!(features.windows(2).all(|w| w[0] < w[1]));

    let mut total_sum = 0.0;
    let mut total_sq = 0.0;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for &i in rows {
        let v = y[i];
        total_sum += v;
        total_sq += v * v;
        y_min = y_min.min(v);
        y_max = y_max.max(v);
    }
    // A constant response admits no variance reduction; rounding in the
    // running sums must not manufacture one.
    if y_min == y_max {
        return None;
    }
    let sse_parent = total_sq - total_sum * total_sum / m as f64;

    let mut best: Option<SplitCandidate> = None;
    for &f in features {
        let col = cols[f];
        scratch.clear();
        scratch.extend(rows.iter().map(|&i| (col[i], y[i])));
        scratch.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));

        let mut left_sum = 0.0;
        let mut left_sq = 0.0;
        for k in 0..m - 1 {
            let (v, yv) = scratch[k];
            left_sum += yv;
            left_sq += yv * yv;
            let next = scratch[k + 1].0;
            if v == next {
                continue;
            }
            let n_left = k + 1;
            let n_right = m - n_left;
            if n_left < min_leaf || n_right < min_leaf {
                continue;
            }
            let sse_left = left_sq - left_sum * left_sum / n_left as f64;
            let right_sum = total_sum - left_sum;
            let right_sq = total_sq - left_sq;
            let sse_right = right_sq - right_sum * right_sum / n_right as f64;
            let score = (sse_parent - sse_left - sse_right) / m as f64;
            if score > 0.0 && best.map_or(true, |b| score > b.score) {
                let mut threshold = v + (next - v) / 2.0;
                // Keep routing consistent with the scan when the midpoint
                // rounds onto the right value.
                if threshold >= next {
                    threshold = v;
                }
                best = Some(SplitCandidate {
                    feature: f,
                    threshold,
                    score,
                });
            }
        }
    }
    best
}

/// Public entry point over a dense matrix; `rows` are row indices and
/// `features` column indices (deduplicated ascending).
pub fn best_split(
    x: &DMatrix<f64>,
    y: &[f64],
    rows: &[usize],
    features: &[usize],
    min_leaf: usize,
) -> Option<SplitCandidate> {
    let n = x.nrows();
    let data = x.as_slice();
    let cols: Vec<&[f64]> = (0..x.ncols()).map(|j| &data[j * n..(j + 1) * n]).collect();
    let mut sorted_features: Vec<usize> = features.to_vec();
    sorted_features.sort_unstable();
    sorted_features.dedup();
    let mut scratch = Vec::with_capacity(rows.len());
    best_split_cols(&cols, y, rows, &sorted_features, min_leaf, &mut scratch)
}

/// Every admissible variance-reducing split, computed directly from the
/// textbook definitions (per-child means and variances, no incremental
/// bookkeeping). Exhaustive and slow; exists as an independent reference for
/// tests.
pub fn enumerate_splits(
    x: &DMatrix<f64>,
    y: &[f64],
    rows: &[usize],
    features: &[usize],
    min_leaf: usize,
) -> Vec<SplitCandidate> {
    let m = rows.len();
    let mut out = Vec::new();
    if m < 2 {
        return out;
    }
    let variance = |idx: &[usize]| -> f64 {
        if idx.is_empty() {
            return 0.0;
        }
        let mean = idx.iter().map(|&i| y[i]).sum::<f64>() / idx.len() as f64;
        idx.iter().map(|&i| (y[i] - mean).powi(2)).sum::<f64>() / idx.len() as f64
    };
    let parent = variance(rows);
    let mut feats = features.to_vec();
    feats.sort_unstable();
    feats.dedup();
    for &f in &feats {
        let mut values: Vec<f64> = rows.iter().map(|&i| x[(i, f)]).collect();
        values.sort_unstable_by(f64::total_cmp);
        values.dedup();
        for w in values.windows(2) {
            let mut threshold = w[0] + (w[1] - w[0]) / 2.0;
            if threshold >= w[1] {
                threshold = w[0];
            }
            let left: Vec<usize> = rows
                .iter()
                .copied()
                .filter(|&i| x[(i, f)] <= threshold)
                .collect();
            let right: Vec<usize> = rows
                .iter()
                .copied()
                .filter(|&i| x[(i, f)] > threshold)
                .collect();
            if left.len() < min_leaf || right.len() < min_leaf {
                continue;
            }
            let weighted = (left.len() as f64 * variance(&left)
                + right.len() as f64 * variance(&right))
                / m as f64;
            let score = parent - weighted;
            if score > 0.0 {
                out.push(SplitCandidate {
                    feature: f,
                    threshold,
                    score,
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix_from_cols(cols: &[Vec<f64>]) -> DMatrix<f64> {
        let n = cols[0].len();
        DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i])
    }

    #[test]
    fn textbook_step_split() {
        let x = matrix_from_cols(&[vec![1.0, 2.0, 3.0, 4.0]]);
        let y = [0.0, 0.0, 1.0, 1.0];
        let rows = [0, 1, 2, 3];
        let got = best_split(&x, &y, &rows, &[0], 1).unwrap();
        assert_eq!(got.feature, 0);
        assert_eq!(got.threshold, 2.5);
        assert!((got.score - 0.25).abs() < 1e-12);

        // Brute force over the three candidate thresholds agrees.
        let all = enumerate_splits(&x, &y, &rows, &[0], 1);
        let best = all
            .iter()
            .cloned()
            .max_by(|a, b| a.score.total_cmp(&b.score))
            .unwrap();
        assert_eq!(best.threshold, 2.5);
        assert!((best.score - 0.25).abs() < 1e-12);
    }

    #[test]
    fn constant_response_yields_none() {
        let x = matrix_from_cols(&[vec![1.0, 2.0, 3.0, 4.0]]);
        let y = [0.1, 0.1, 0.1, 0.1];
        assert!(best_split(&x, &y, &[0, 1, 2, 3], &[0], 1).is_none());
    }

    #[test]
    fn tie_breaks_toward_lowest_feature() {
        // Identical feature columns give bitwise-equal scores; feature 0 wins.
        let col = vec![1.0, 2.0, 3.0, 4.0];
        let x = matrix_from_cols(&[col.clone(), col]);
        let y = [0.0, 0.0, 1.0, 1.0];
        let got = best_split(&x, &y, &[0, 1, 2, 3], &[0, 1], 1).unwrap();
        assert_eq!(got.feature, 0);
    }

    #[test]
    fn tie_breaks_toward_lowest_threshold() {
        // 1 | 2 2 1 and 1 2 2 | 1 mirror each other and tie exactly (the
        // incremental sums round identically by symmetry of the y values).
        let x = matrix_from_cols(&[vec![1.0, 2.0, 3.0, 4.0]]);
        let y = [1.0, 2.0, 2.0, 1.0];
        let got = best_split(&x, &y, &[0, 1, 2, 3], &[0], 1).unwrap();
        assert_eq!(got.threshold, 1.5);
    }

    #[test]
    fn min_leaf_is_enforced() {
        let x = matrix_from_cols(&[vec![1.0, 2.0, 3.0, 4.0]]);
        let y = [0.0, 0.0, 0.0, 10.0];
        // min_leaf 2 forbids the 3|1 cut; only 2|2 remains.
        let got = best_split(&x, &y, &[0, 1, 2, 3], &[0], 2).unwrap();
        assert_eq!(got.threshold, 2.5);
    }

    #[test]
    fn agrees_with_brute_force_on_random_corpus() {
        use rand::Rng;
        let mut rng = crate::seed::rng_for(31, &[0]);
        for case in 0..300 {
            let n = rng.random_range(2..=8);
            let p = rng.random_range(1..=3);
            let x = DMatrix::from_fn(n, p, |_, _| {
                // Coarse value grid so ties across rows are common.
                (rng.random_range(0..6) as f64) / 2.0
            });
            let y: Vec<f64> = (0..n)
                .map(|_| (rng.random_range(0..4) as f64) / 2.0)
                .collect();
            let rows: Vec<usize> = (0..n).collect();
            let features: Vec<usize> = (0..p).collect();
            let min_leaf = rng.random_range(1..=2);
            let got = best_split(&x, &y, &rows, &features, min_leaf);
            let all = enumerate_splits(&x, &y, &rows, &features, min_leaf);
            compare_with_reference(case, got, &all);
        }
    }

    /// Shared check: the fast search must match the exhaustive reference on
    /// existence and score; on the exact split too unless the reference has a
    /// genuine floating-point near-tie at the top.
    pub fn compare_with_reference(
        case: usize,
        got: Option<SplitCandidate>,
        reference: &[SplitCandidate],
    ) {
        match (got, reference.is_empty()) {
            (None, true) => {}
            (None, false) => panic!("case {case}: search missed {reference:?}"),
            (Some(s), true) => panic!("case {case}: search invented {s:?}"),
            (Some(s), false) => {
                let mut scores: Vec<f64> = reference.iter().map(|c| c.score).collect();
                scores.sort_by(f64::total_cmp);
                let top = *scores.last().unwrap();
                assert!(
                    (s.score - top).abs() <= 1e-10 * (1.0 + top.abs()),
                    "case {case}: score {} vs reference max {top}",
                    s.score
                );
                let runner_up = scores.iter().rev().nth(1).copied();
                let unique = runner_up.map_or(true, |r| top - r > 1e-9 * (1.0 + top.abs()));
                if unique {
                    let best = reference
                        .iter()
                        .max_by(|a, b| a.score.total_cmp(&b.score))
                        .unwrap();
                    assert_eq!(s.feature, best.feature, "case {case}");
                    assert_eq!(s.threshold, best.threshold, "case {case}");
                }
            }
        }
    }
}
