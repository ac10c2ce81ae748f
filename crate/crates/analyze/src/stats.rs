//! Boxplot statistics.
//!
//! Quartiles interpolate linearly between the closest ranks: for sorted
//! values `x[0..n]` the p-quantile sits at position `h = (n − 1)·p` and is
//! `x[⌊h⌋] + (h − ⌊h⌋)·(x[⌊h⌋+1] − x[⌊h⌋])`. Whiskers reach the most extreme
//! values inside `[q1 − 1.5·IQR, q3 + 1.5·IQR]`; values outside are outliers.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::Locality;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("no data")]
pub struct NoData;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub group: String,
    pub locality: Locality,
    pub count: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: Vec<f64>,
}

impl LatencyStats {
    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

/// The p-quantile of sorted, non-empty `xs`.
pub fn quantile(xs: &[f64], p: f64) -> f64 {
    let h = (xs.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(xs.len() - 1);
    xs[lo] + (h - lo as f64) * (xs[hi] - xs[lo])
}

pub fn stats(group: &str, locality: Locality, values: &[f64]) -> Result<LatencyStats, NoData> {
    if values.is_empty() {
        return Err(NoData);
    }
    let mut xs = values.to_vec();
    xs.sort_by(f64::total_cmp);
    let q1 = quantile(&xs, 0.25);
    let median = quantile(&xs, 0.5);
    let q3 = quantile(&xs, 0.75);
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside = |x: &&f64| **x >= lo_fence && **x <= hi_fence;
    // Summed in sorted order so the mean does not depend on input order.
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    Ok(LatencyStats {
        group: group.to_string(),
        locality,
        count: xs.len(),
        min: xs[0],
        q1,
        median,
        q3,
        max: xs[xs.len() - 1],
        mean,
        whisker_low: *xs.iter().find(inside).unwrap_or(&q1),
        whisker_high: *xs.iter().rev().find(inside).unwrap_or(&q3),
        outliers: xs.iter().copied().filter(|x| !inside(&x)).collect(),
    })
}

/// `bins` equal-width bins over `[min, max]` as `(bin_center, count)`.
pub fn histogram(values: &[f64], bins: usize) -> Vec<(f64, u64)> {
    if values.is_empty() || bins == 0 {
        return Vec::new();
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (max - min) / bins as f64;
    let mut counts = vec![0u64; bins];
    for &v in values {
        let i = if width > 0.0 {
            (((v - min) / width) as usize).min(bins - 1)
        } else {
            0
        };
        counts[i] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (min + (i as f64 + 0.5) * width, c))
        .collect()
}
