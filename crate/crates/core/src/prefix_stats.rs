//! Sorted samples and O(1) interval statistics over them.
//!
//! All indices are zero-based and intervals are inclusive: `first..=last`.

use crate::dd::Dd;
use crate::error::{Error, Result};

/// A nonempty, finite sample stored in nondecreasing order.
///
/// Construction sorts the input and keeps the permutation, so per-point
/// results computed on the sorted values can be mapped back to input order.
#[derive(Debug, Clone, PartialEq)]
pub struct SortedSample {
    values: Vec<f64>,
    /// `order[i]` is the input position of the `i`-th sorted value.
    order: Vec<usize>,
}

impl SortedSample {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptySample);
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        let mut order: Vec<usize> = (0..values.len()).collect();
        // Stable, so equal values keep their input order.
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let values = order.iter().map(|&i| values[i]).collect();
        Ok(Self { values, order })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Input position of each sorted value.
    pub fn permutation(&self) -> &[usize] {
        &self.order
    }

    /// Reorders per-point data given in sorted order back into input order.
    pub fn to_input_order<T: Clone>(&self, sorted: &[T]) -> Vec<T> {
        assert_eq!(sorted.len(), self.len(), "per-point data length mismatch");
        let mut out: Vec<Option<T>> = vec![None; sorted.len()];
        for (item, &pos) in sorted.iter().zip(&self.order) {
            out[pos] = Some(item.clone());
        }
        out.into_iter().map(|v| v.expect("permutation")).collect()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.len() as f64
    }

    /// Biased (divide-by-N) sample variance.
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.values.iter().map(|x| (x - m).powi(2)).sum::<f64>() / self.len() as f64
    }
}

/// Prefix sums of the centered sample, accumulated in double-double.
///
/// Interval sums of squares come out of `S2 - S1^2 / n`; the cancellation in
/// that expression is absorbed by the ~106-bit accumulators, so narrow
/// intervals inside widely spread data keep full f64 relative precision.
#[derive(Debug, Clone)]
pub struct PrefixStats {
    values: Vec<f64>,
    shift: f64,
    /// `sum1[i]` = sum of `x - shift` over the first `i` points.
    sum1: Vec<Dd>,
    sum2: Vec<Dd>,
}

impl PrefixStats {
    pub fn new(sample: &SortedSample) -> Self {
        let values = sample.values().to_vec();
        let shift = sample.mean();
        let n = values.len();
        let mut sum1 = Vec::with_capacity(n + 1);
        let mut sum2 = Vec::with_capacity(n + 1);
        let (mut s1, mut s2) = (Dd::ZERO, Dd::ZERO);
        sum1.push(s1);
        sum2.push(s2);
        for &x in &values {
            let y = Dd::diff(x, shift);
            s1 = s1.add(y);
            s2 = s2.add(y.mul(y));
            sum1.push(s1);
            sum2.push(s2);
        }
        Self {
            values,
            shift,
            sum1,
            sum2,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Sum of the first `count` values.
    pub fn cumulative_sum(&self, count: usize) -> f64 {
        let shifted = Dd {
            hi: self.shift * count as f64,
            lo: self.shift.mul_add(count as f64, -(self.shift * count as f64)),
        };
        self.sum1[count].add(shifted).to_f64()
    }

    fn check(&self, first: usize, last: usize) -> Result<()> {
        if first > last || last >= self.len() {
            return Err(Error::IndexOutOfRange {
                first,
                last,
                len: self.len(),
            });
        }
        Ok(())
    }

    /// Mean of `x[first..=last]`.
    pub fn cluster_mean(&self, first: usize, last: usize) -> Result<f64> {
        self.check(first, last)?;
        Ok(self.mean(first, last))
    }

    /// Unnormalized within-interval sum of squared deviations from the mean.
    pub fn cluster_ssq(&self, first: usize, last: usize) -> Result<f64> {
        self.check(first, last)?;
        Ok(self.ssq(first, last))
    }

    /// Unchecked [`cluster_mean`](Self::cluster_mean). The result is clamped to
    /// `[x[first], x[last]]`, so means of adjacent intervals never cross.
    #[inline]
    pub(crate) fn mean(&self, first: usize, last: usize) -> f64 {
        debug_assert!(first <= last && last < self.len());
        let lo = self.values[first];
        let hi = self.values[last];
        if lo == hi {
            return lo;
        }
        let n = (last - first + 1) as f64;
        let s1 = self.sum1[last + 1].sub(self.sum1[first]);
        let m = s1.div_f64(n).add(Dd {
            hi: self.shift,
            lo: 0.0,
        });
        m.to_f64().clamp(lo, hi)
    }

    #[inline]
    pub(crate) fn ssq(&self, first: usize, last: usize) -> f64 {
        debug_assert!(first <= last && last < self.len());
        if self.values[first] == self.values[last] {
            return 0.0;
        }
        let n = (last - first + 1) as f64;
        let s1 = self.sum1[last + 1].sub(self.sum1[first]);
        let s2 = self.sum2[last + 1].sub(self.sum2[first]);
        s2.sub(s1.mul(s1).div_f64(n)).to_f64().max(0.0)
    }
}
