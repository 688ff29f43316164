//! Small numeric helpers shared across modules.

/// Standard logistic function, clamped so finite inputs never map to exactly
/// 0 or 1 (large |t| would otherwise saturate in f64).
#[inline]
pub(crate) fn sigmoid(t: f64) -> f64 {
    let s = if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Streaming (Welford) arithmetic mean. Exact for constant inputs.
#[inline]
pub(crate) fn streaming_mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut mean = 0.0;
    let mut count = 0u64;
    for v in values {
        count += 1;
        mean += (v - mean) / count as f64;
    }
    mean
}

/// Sample mean and standard deviation (denominator n - 1) via Welford's
/// recurrence. Returns (mean, sd); sd is 0 for fewer than two values.
pub(crate) fn mean_sd(values: &[f64]) -> (f64, f64) {
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (k, &v) in values.iter().enumerate() {
        let delta = v - mean;
        mean += delta / (k + 1) as f64;
        m2 += delta * (v - mean);
    }
    let sd = if values.len() > 1 {
        (m2 / (values.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

/// Linear-interpolation quantile (R type 7) of an ascending-sorted slice.
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    debug_assert!((0.0..=1.0).contains(&q));
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

/// Dot product over plain slices.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
