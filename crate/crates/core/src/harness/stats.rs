//! Coverage, histogram, and boxplot summaries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::quantile_sorted;

/// Percent of intervals containing `truth` (closed endpoints).
pub fn coverage(intervals: &[(f64, f64)], truth: f64) -> Result<f64> {
    if intervals.is_empty() {
        return Err(Error::InvalidInput("no intervals to summarize".into()));
    }
    let hits = intervals
        .iter()
        .filter(|(lo, hi)| *lo <= truth && truth <= *hi)
        .count();
    Ok(100.0 * hits as f64 / intervals.len() as f64)
}

/// Equal-width histogram spanning [min, max]. `edges` has one more entry than
/// `counts`; each bin is half-open except the last, which includes the
/// maximum. Identical values collapse to a single bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

pub fn histogram(values: &[f64], num_bins: usize) -> Result<Histogram> {
    if values.is_empty() {
        return Err(Error::InvalidInput("cannot histogram no values".into()));
    }
    if num_bins == 0 {
        return Err(Error::InvalidParameter("num_bins must be >= 1".into()));
    }
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(min.is_finite() && max.is_finite()) {
        return Err(Error::InvalidInput("non-finite values".into()));
    }
    if min == max {
        return Ok(Histogram {
            edges: vec![min, max],
            counts: vec![values.len() as u64],
        });
    }
    let width = (max - min) / num_bins as f64;
    let edges: Vec<f64> = (0..=num_bins)
        .map(|k| {
            if k == num_bins {
                max
            } else {
                min + width * k as f64
            }
        })
        .collect();
    let mut counts = vec![0u64; num_bins];
    for &v in values {
        let bin = (((v - min) / width).floor() as usize).min(num_bins - 1);
        counts[bin] += 1;
    }
    Ok(Histogram { edges, counts })
}

/// Five-number summary with Tukey whiskers (1.5 IQR) and listed outliers.
/// Quartiles use linear interpolation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxplotStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: Vec<f64>,
}

pub fn boxplot_stats(values: &[f64]) -> Result<BoxplotStats> {
    if values.is_empty() {
        return Err(Error::InvalidInput("cannot summarize no values".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&sorted, 0.25);
    let median = quantile_sorted(&sorted, 0.5);
    let q3 = quantile_sorted(&sorted, 0.75);
    let iqr = q3 - q1;
    let fence_low = q1 - 1.5 * iqr;
    let fence_high = q3 + 1.5 * iqr;
    let whisker_low = sorted
        .iter()
        .cloned()
        .find(|&v| v >= fence_low)
        .unwrap_or(sorted[0]);
    let whisker_high = sorted
        .iter()
        .rev()
        .cloned()
        .find(|&v| v <= fence_high)
        .unwrap_or(*sorted.last().unwrap());
    let outliers: Vec<f64> = sorted
        .iter()
        .cloned()
        .filter(|&v| v < whisker_low || v > whisker_high)
        .collect();
    Ok(BoxplotStats {
        min: sorted[0],
        q1,
        median,
        q3,
        max: *sorted.last().unwrap(),
        whisker_low,
        whisker_high,
        outliers,
    })
}
