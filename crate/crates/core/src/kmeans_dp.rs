//! Exact one-dimensional K-means by dynamic programming.
//!
//! [`kmeans_1d`] is the classic O(N K log N) divide-and-conquer DP over
//! contiguous partitions of sorted data. [`kmeans_1d_sep`] solves the same
//! problem restricted to partitions whose adjacent barycenters are at least
//! `delta` apart.
//!
//! # Separation DP
//!
//! Indices are zero-based; a cluster is an inclusive range `start..=end`. For
//! `m` clusters over the points `0..=end` the solver keeps
//!
//! * `D(end, m)`: best objective, or infeasible;
//! * `I(end, m)`: start of the last cluster in the best partition (largest on ties);
//! * `B(end, m)`: smallest start of the last cluster over all feasible partitions;
//! * `U(start, end, m)`: best objective of the points before `start` in `m - 1`
//!   clusters, given that the last cluster is `start..=end` and every gap holds.
//!
//! For each candidate last cluster `j..=end`, the previous cluster ends at
//! `j - 1` and starts somewhere in `B(j-1, m-1)..=I(j-1, m-1)`: starts above
//! `I` only raise the previous center, and starts below `B` admit no feasible
//! prefix. If the gap already holds at `I`, the prefix costs `D(j-1, m-1)`.
//! Otherwise the range is scanned downward from `I`, and [`ScanRule`] decides
//! whether the first start that satisfies the gap is taken or the cheapest one.
//!
//! Infeasible cells hold `f64::INFINITY` internally; [`DpTables::objective`]
//! reports them as the sentinel `beta = W(0, N-1) + 1`.

use crate::error::{Error, Result};
use crate::prefix_stats::{PrefixStats, SortedSample};

/// Largest N the separation solver accepts without `force`.
pub const SIZE_LIMIT: usize = 5000;

/// How the previous cluster's start is chosen once the gap fails at `I`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScanRule {
    /// Minimum over every start in `B..I` that satisfies the gap. Exact.
    #[default]
    Exhaustive,
    /// First start below `I` that satisfies the gap, then stop. This is the
    /// greedy reading of the recursion; it can miss the optimum when the
    /// prefix cost is not unimodal in the start.
    FirstFeasible,
}

/// Options for the separation-constrained solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeparationDp {
    pub delta: f64,
    pub rule: ScanRule,
    /// Bypass the [`SIZE_LIMIT`] check.
    pub force: bool,
}

impl SeparationDp {
    pub fn new(delta: f64) -> Self {
        Self {
            delta,
            rule: ScanRule::default(),
            force: false,
        }
    }

    pub fn with_rule(mut self, rule: ScanRule) -> Self {
        self.rule = rule;
        self
    }

    pub fn forced(mut self, force: bool) -> Self {
        self.force = force;
        self
    }

    /// Fill the DP tables.
    pub fn tables(&self, stats: &PrefixStats, k: usize) -> Result<DpTables> {
        check_k(stats.len(), k)?;
        if !self.delta.is_finite() || self.delta < 0.0 {
            return Err(Error::InvalidSeparation(self.delta));
        }
        if stats.len() > SIZE_LIMIT && !self.force {
            return Err(Error::ProblemTooLarge {
                n: stats.len(),
                limit: SIZE_LIMIT,
            });
        }
        Ok(DpTables::build(stats, k, self.delta, self.rule))
    }

    /// Solve and backtrack. `Ok(None)` means no partition satisfies the gap.
    pub fn solve(&self, stats: &PrefixStats, k: usize) -> Result<Option<KmeansSolution>> {
        let tables = self.tables(stats, k)?;
        if !tables.is_feasible(stats.len() - 1, k) {
            return Ok(None);
        }
        let boundaries = match self.rule {
            ScanRule::Exhaustive => backtrack(&tables)?,
            ScanRule::FirstFeasible => backtrack_by_scan(&tables, stats)?,
        };
        Ok(Some(KmeansSolution::from_boundaries(stats, boundaries)))
    }
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::InvalidClusterCount { k, n });
    }
    Ok(())
}

/// One `(end, m)` slice of `U`, stored from its first feasible start.
#[derive(Debug, Clone, Default)]
struct URow {
    first_start: usize,
    cost: Vec<f64>,
    /// Start of cluster `m - 1` that attains `cost`.
    split: Vec<u32>,
}

impl URow {
    fn get(&self, start: usize) -> Option<(f64, usize)> {
        let idx = start.checked_sub(self.first_start)?;
        let c = *self.cost.get(idx)?;
        c.is_finite().then(|| (c, self.split[idx] as usize))
    }
}

/// Filled tables of the separation DP.
#[derive(Debug, Clone)]
pub struct DpTables {
    n: usize,
    k: usize,
    delta: f64,
    beta: f64,
    d: Vec<f64>,
    last_start: Vec<Option<usize>>,
    smallest_start: Vec<Option<usize>>,
    /// `u[m - 2][end]` for `m` in `2..=k`.
    u: Vec<Vec<URow>>,
}

impl DpTables {
    fn idx(&self, end: usize, m: usize) -> usize {
        debug_assert!(m >= 1 && m <= self.k && end < self.n);
        end * self.k + (m - 1)
    }

    fn d(&self, end: usize, m: usize) -> f64 {
        self.d[self.idx(end, m)]
    }

    #[allow(clippy::needless_range_loop)]
    fn build(stats: &PrefixStats, k: usize, delta: f64, rule: ScanRule) -> Self {
        let n = stats.len();
        let mut t = DpTables {
            n,
            k,
            delta,
            beta: stats.ssq(0, n - 1) + 1.0,
            d: vec![f64::INFINITY; n * k],
            last_start: vec![None; n * k],
            smallest_start: vec![None; n * k],
            u: Vec::with_capacity(k.saturating_sub(1)),
        };
        for end in 0..n {
            let i = t.idx(end, 1);
            t.d[i] = stats.ssq(0, end);
            t.last_start[i] = Some(0);
            t.smallest_start[i] = Some(0);
        }

        for m in 2..=k {
            let mut rows = vec![URow::default(); n];
            for end in m - 1..n {
                // A feasible m-partition of 0..=end yields a feasible
                // (m-1)-partition of 0..end by merging the last two clusters.
                if !t.d(end - 1, m - 1).is_finite() {
                    continue;
                }
                let mut cost = Vec::with_capacity(end + 2 - m);
                let mut split = Vec::with_capacity(end + 2 - m);
                let mut best = f64::INFINITY;
                let mut best_start = None;
                let mut smallest = None;
                for start in m - 1..=end {
                    let (prefix, at) = t.best_prefix(stats, start, end, m, rule);
                    cost.push(prefix);
                    split.push(at as u32);
                    if !prefix.is_finite() {
                        continue;
                    }
                    smallest.get_or_insert(start);
                    let total = prefix + stats.ssq(start, end);
                    if total <= best {
                        best = total;
                        best_start = Some(start);
                    }
                }
                if let Some(s) = smallest {
                    let skip = s - (m - 1);
                    rows[end] = URow {
                        first_start: s,
                        cost: cost.split_off(skip),
                        split: split.split_off(skip),
                    };
                }
                let i = t.idx(end, m);
                t.d[i] = best;
                t.last_start[i] = best_start;
                t.smallest_start[i] = smallest;
            }
            t.u.push(rows);
        }
        t
    }

    /// Best cost of `0..start` in `m - 1` clusters with the `(m-1)`-th cluster
    /// separated from `start..=end`, and the start of that cluster.
    fn best_prefix(
        &self,
        stats: &PrefixStats,
        start: usize,
        end: usize,
        m: usize,
        rule: ScanRule,
    ) -> (f64, usize) {
        let prev = start - 1;
        let (Some(hi), Some(lo)) = (self.last_start(prev, m - 1), self.smallest_last_start(prev, m - 1))
        else {
            return (f64::INFINITY, 0);
        };
        let center = stats.mean(start, end);
        if center - stats.mean(hi, prev) >= self.delta {
            return (self.d(prev, m - 1), hi);
        }
        // The previous center falls as its cluster extends left, so the
        // starts satisfying the gap form a prefix `lo..a` of the range.
        let (mut a, mut b) = (lo, hi);
        while a < b {
            let mid = a + (b - a) / 2;
            if center - stats.mean(mid, prev) >= self.delta {
                a = mid + 1;
            } else {
                b = mid;
            }
        }
        let mut best = (f64::INFINITY, 0);
        for s in (lo..a).rev() {
            let w = stats.ssq(s, prev);
            // U >= 0 and W only grows as the cluster extends left.
            if rule == ScanRule::Exhaustive && w >= best.0 {
                break;
            }
            if center - stats.mean(s, prev) >= self.delta {
                let c = self.prefix_cost(s, prev, m - 1).map_or(f64::INFINITY, |u| u + w);
                match rule {
                    ScanRule::FirstFeasible => return (c, s),
                    ScanRule::Exhaustive if c < best.0 => best = (c, s),
                    ScanRule::Exhaustive => {}
                }
            }
        }
        best
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn clusters(&self) -> usize {
        self.k
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Infeasibility sentinel, strictly above any achievable objective.
    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn is_feasible(&self, end: usize, m: usize) -> bool {
        self.d(end, m).is_finite()
    }

    /// `D(end, m)`, with infeasible cells reported as [`beta`](Self::beta).
    pub fn objective(&self, end: usize, m: usize) -> f64 {
        let v = self.d(end, m);
        if v.is_finite() {
            v
        } else {
            self.beta
        }
    }

    /// `I(end, m)`.
    pub fn last_start(&self, end: usize, m: usize) -> Option<usize> {
        self.last_start[self.idx(end, m)]
    }

    /// `B(end, m)`.
    pub fn smallest_last_start(&self, end: usize, m: usize) -> Option<usize> {
        self.smallest_start[self.idx(end, m)]
    }

    /// `U(start, end, m)`, `None` where no separated prefix exists.
    pub fn prefix_cost(&self, start: usize, end: usize, m: usize) -> Option<f64> {
        self.u_entry(start, end, m).map(|(c, _)| c)
    }

    fn u_entry(&self, start: usize, end: usize, m: usize) -> Option<(f64, usize)> {
        if m == 1 {
            return (start == 0).then_some((0.0, 0));
        }
        self.u.get(m - 2)?.get(end)?.get(start)
    }
}

/// Recover cluster starts by following the recorded split points.
pub fn backtrack(tables: &DpTables) -> Result<Vec<usize>> {
    let k = tables.k;
    let mut end = tables.n - 1;
    let mut start = tables.last_start(end, k).ok_or(Error::Infeasible)?;
    let mut starts = vec![0; k];
    starts[k - 1] = start;
    for m in (2..=k).rev() {
        let (_, split) = tables.u_entry(start, end, m).ok_or(Error::Infeasible)?;
        starts[m - 2] = split;
        end = start - 1;
        start = split;
    }
    Ok(starts)
}

/// Recover cluster starts by re-running the downward scans: for each cluster,
/// take the first start from `I` toward `B` whose center clears the already
/// fixed cluster to its right by `delta`.
///
/// Agrees with [`backtrack`] on tables built with [`ScanRule::FirstFeasible`].
pub fn backtrack_by_scan(tables: &DpTables, stats: &PrefixStats) -> Result<Vec<usize>> {
    let k = tables.k;
    let n = tables.n;
    let mut starts = vec![0; k];
    starts[k - 1] = tables.last_start(n - 1, k).ok_or(Error::Infeasible)?;
    let mut right_end = n - 1;
    for m in (1..k).rev() {
        let right_start = starts[m];
        let l = right_start - 1;
        let hi = tables.last_start(l, m).ok_or(Error::Infeasible)?;
        let lo = tables.smallest_last_start(l, m).ok_or(Error::Infeasible)?;
        let right_center = stats.mean(right_start, right_end);
        let found = (lo..=hi)
            .rev()
            .find(|&j| right_center - stats.mean(j, l) >= tables.delta)
            .ok_or(Error::Infeasible)?;
        starts[m - 1] = found;
        right_end = l;
    }
    Ok(starts)
}

/// A contiguous partition of a sorted sample.
#[derive(Debug, Clone, PartialEq)]
pub struct KmeansSolution {
    starts: Vec<usize>,
    centers: Vec<f64>,
    sizes: Vec<usize>,
    objective: f64,
}

impl KmeansSolution {
    /// Build from cluster start indices (first must be 0, strictly increasing).
    pub fn from_boundaries(stats: &PrefixStats, starts: Vec<usize>) -> Self {
        assert!(!starts.is_empty() && starts[0] == 0, "first cluster must start at 0");
        assert!(starts.windows(2).all(|w| w[0] < w[1]), "starts must increase");
        let n = stats.len();
        let mut centers = Vec::with_capacity(starts.len());
        let mut sizes = Vec::with_capacity(starts.len());
        let mut objective = 0.0;
        for (c, &s) in starts.iter().enumerate() {
            let e = starts.get(c + 1).map_or(n - 1, |&next| next - 1);
            centers.push(stats.mean(s, e));
            sizes.push(e - s + 1);
            objective += stats.ssq(s, e);
        }
        Self {
            starts,
            centers,
            sizes,
            objective,
        }
    }

    pub fn k(&self) -> usize {
        self.starts.len()
    }

    /// Zero-based index of the first point of each cluster.
    pub fn boundaries(&self) -> &[usize] {
        &self.starts
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Sum of within-cluster squared deviations.
    pub fn objective(&self) -> f64 {
        self.objective
    }

    /// Smallest gap between adjacent centers (`+inf` for one cluster).
    pub fn min_gap(&self) -> f64 {
        self.centers
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }

    /// Zero-based cluster id of each point, in sorted order.
    pub fn labels(&self) -> Vec<usize> {
        self.sizes
            .iter()
            .enumerate()
            .flat_map(|(c, &size)| std::iter::repeat_n(c, size))
            .collect()
    }

    /// Zero-based cluster id of each point, in the sample's input order.
    pub fn labels_in_input_order(&self, sample: &SortedSample) -> Vec<usize> {
        sample.to_input_order(&self.labels())
    }
}

/// Unconstrained optimal K-means on sorted data.
pub fn kmeans_1d(stats: &PrefixStats, k: usize) -> Result<KmeansSolution> {
    let n = stats.len();
    check_k(n, k)?;
    let mut prev: Vec<f64> = (0..n).map(|e| stats.ssq(0, e)).collect();
    let mut splits: Vec<Vec<u32>> = Vec::with_capacity(k - 1);
    for m in 2..=k {
        let mut cur = vec![f64::INFINITY; n];
        let mut arg = vec![0u32; n];
        let lo = m - 1;
        fill_stage(stats, &prev, &mut cur, &mut arg, lo, n - 1, lo, n - 1);
        splits.push(arg);
        prev = cur;
    }
    let mut starts = vec![0; k];
    let mut end = n - 1;
    for m in (2..=k).rev() {
        let s = splits[m - 2][end] as usize;
        starts[m - 1] = s;
        end = s - 1;
    }
    Ok(KmeansSolution::from_boundaries(stats, starts))
}

/// Divide and conquer over `end`, using that the largest optimal start of
/// the last cluster is nondecreasing in `end`.
#[allow(clippy::too_many_arguments)]
fn fill_stage(
    stats: &PrefixStats,
    prev: &[f64],
    cur: &mut [f64],
    arg: &mut [u32],
    end_lo: usize,
    end_hi: usize,
    start_lo: usize,
    start_hi: usize,
) {
    if end_lo > end_hi {
        return;
    }
    let mid = end_lo + (end_hi - end_lo) / 2;
    let mut best = f64::INFINITY;
    let mut best_start = start_lo;
    for s in start_lo..=start_hi.min(mid) {
        let c = prev[s - 1] + stats.ssq(s, mid);
        if c <= best {
            best = c;
            best_start = s;
        }
    }
    cur[mid] = best;
    arg[mid] = best_start as u32;
    if mid > end_lo {
        fill_stage(stats, prev, cur, arg, end_lo, mid - 1, start_lo, best_start);
    }
    fill_stage(stats, prev, cur, arg, mid + 1, end_hi, best_start, start_hi);
}

/// Optimal K-means over contiguous partitions whose adjacent centers are at
/// least `delta` apart, using the exact scan. `Ok(None)` when infeasible.
pub fn kmeans_1d_sep(stats: &PrefixStats, k: usize, delta: f64) -> Result<Option<KmeansSolution>> {
    SeparationDp::new(delta).solve(stats, k)
}
