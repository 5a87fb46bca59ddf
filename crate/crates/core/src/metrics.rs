//! Clustering agreement and parameter-recovery errors.
//!
//! Estimated and true components are matched by position; callers pass both
//! in increasing-mean order.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::gmm_em::GmmParams;

fn same_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// Unadjusted Rand index: the fraction of point pairs on which two
/// clusterings agree (together in both, or apart in both).
///
/// Computed from the contingency table in O(N + cells).
pub fn rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    same_len(a.len(), b.len())?;
    let n = a.len();
    if n < 2 {
        return Err(Error::InvalidParams("rand index needs at least two points".into()));
    }
    let mut joint: HashMap<(usize, usize), u64> = HashMap::new();
    let mut rows: HashMap<usize, u64> = HashMap::new();
    let mut cols: HashMap<usize, u64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let pairs = |c: u64| c * c.saturating_sub(1) / 2;
    let together_both: u64 = joint.values().copied().map(pairs).sum();
    let together_a: u64 = rows.values().copied().map(pairs).sum();
    let together_b: u64 = cols.values().copied().map(pairs).sum();
    let total = pairs(n as u64);
    let apart_both = total + together_both - together_a - together_b;
    Ok((together_both + apart_both) as f64 / total as f64)
}

/// `sum_k |est_k - truth_k|`.
pub fn center_error_total(est: &[f64], truth: &[f64]) -> Result<f64> {
    same_len(truth.len(), est.len())?;
    Ok(est.iter().zip(truth).map(|(e, t)| (e - t).abs()).sum())
}

/// `sum_k |n̂_k - n_k|`.
pub fn size_error_total(est: &[usize], truth: &[usize]) -> Result<f64> {
    same_len(truth.len(), est.len())?;
    Ok(est.iter().zip(truth).map(|(&e, &t)| e.abs_diff(t) as f64).sum())
}

/// `(1/K) sum_k |est_k - truth_k|`.
pub fn center_error_avg(est: &[f64], truth: &[f64]) -> Result<f64> {
    Ok(center_error_total(est, truth)? / truth.len().max(1) as f64)
}

/// `(1/K) sum_k (|mu-hat - mu| + |pi-hat - pi| + |v-hat - v|)`, variances not
/// standard deviations.
pub fn all_params_error_avg(est: &GmmParams, truth: &GmmParams) -> Result<f64> {
    same_len(truth.k(), est.k())?;
    let k = truth.k() as f64;
    let sum: f64 = (0..truth.k())
        .map(|j| {
            (est.means[j] - truth.means[j]).abs()
                + (est.weights[j] - truth.weights[j]).abs()
                + (est.variances[j] - truth.variances[j]).abs()
        })
        .sum();
    Ok(sum / k)
}

/// Cluster sizes for labels in `0..k`.
pub fn cluster_sizes(labels: &[usize], k: usize) -> Vec<usize> {
    let mut sizes = vec![0; k];
    for &l in labels {
        sizes[l] += 1;
    }
    sizes
}
