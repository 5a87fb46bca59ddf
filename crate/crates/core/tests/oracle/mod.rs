//! Slow, direct reference implementations used as test oracles.
#![allow(dead_code)]

/// Mean and sum of squared deviations computed directly.
pub fn direct_stats(x: &[f64]) -> (f64, f64) {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    (mean, x.iter().map(|v| (v - mean).powi(2)).sum())
}

/// Best contiguous K-partition of sorted `x` whose adjacent means differ by
/// at least `delta`, by enumerating every set of cut points. Returns the
/// objective and cluster starts, or `None` if nothing is feasible.
pub fn brute_partition(x: &[f64], k: usize, delta: f64) -> Option<(f64, Vec<usize>)> {
    fn rec(
        x: &[f64],
        k: usize,
        delta: f64,
        starts: &mut Vec<usize>,
        best: &mut Option<(f64, Vec<usize>)>,
    ) {
        let n = x.len();
        if starts.len() == k {
            let mut total = 0.0;
            let mut prev_mean = f64::NEG_INFINITY;
            for c in 0..k {
                let end = if c + 1 < k { starts[c + 1] } else { n };
                let (mean, ssq) = direct_stats(&x[starts[c]..end]);
                if c > 0 && mean - prev_mean < delta {
                    return;
                }
                prev_mean = mean;
                total += ssq;
            }
            if best.as_ref().is_none_or(|(b, _)| total < *b) {
                *best = Some((total, starts.clone()));
            }
            return;
        }
        let last = *starts.last().unwrap();
        let remaining = k - starts.len();
        for s in last + 1..=n - remaining {
            starts.push(s);
            rec(x, k, delta, starts, best);
            starts.pop();
        }
    }
    let mut best = None;
    rec(x, k, delta, &mut vec![0], &mut best);
    best
}

/// Minimizer of `sum_j d_j (mu_j - t_j)^2` subject to
/// `lo_j <= mu_{j+1} - mu_j <= hi_j`, by trying every assignment of each gap to
/// free / at lower / at upper. Pinned gaps glue components into rigid blocks
/// whose position has a closed form; the best feasible candidate wins.
pub fn qp_by_enumeration(d: &[f64], t: &[f64], gaps: &[(f64, Option<f64>)]) -> Option<Vec<f64>> {
    let k = d.len();
    let g = gaps.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut state = vec![0u8; g];
    loop {
        if state.iter().zip(gaps).all(|(&s, gap)| s != 2 || gap.1.is_some()) {
            let mut mu = vec![0.0; k];
            let mut start = 0;
            while start < k {
                let mut offsets = vec![0.0];
                let mut end = start;
                while end < g && state[end] != 0 {
                    let step = if state[end] == 1 { gaps[end].0 } else { gaps[end].1.unwrap() };
                    offsets.push(offsets.last().unwrap() + step);
                    end += 1;
                }
                let num: f64 = (start..=end).map(|j| d[j] * (t[j] - offsets[j - start])).sum();
                let den: f64 = (start..=end).map(|j| d[j]).sum();
                let c = num / den;
                for j in start..=end {
                    mu[j] = c + offsets[j - start];
                }
                start = end + 1;
            }
            let scale = 1.0 + mu.iter().map(|v| v.abs()).fold(0.0, f64::max);
            let feasible = gaps.iter().enumerate().all(|(j, &(lo, hi))| {
                let gap = mu[j + 1] - mu[j];
                gap >= lo - 1e-9 * scale && hi.is_none_or(|h| gap <= h + 1e-9 * scale)
            });
            if feasible {
                let obj: f64 = (0..k).map(|j| d[j] * (mu[j] - t[j]).powi(2)).sum();
                if best.as_ref().is_none_or(|(b, _)| obj < *b) {
                    best = Some((obj, mu));
                }
            }
        }
        // Next state in base 3.
        let mut i = 0;
        loop {
            if i == g {
                return best.map(|(_, mu)| mu);
            }
            state[i] += 1;
            if state[i] < 3 {
                break;
            }
            state[i] = 0;
            i += 1;
        }
    }
}

/// Plain EM for a univariate mixture, in raw density space.
pub fn textbook_em_step(x: &[f64], w: &[f64], m: &[f64], v: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let k = w.len();
    let n = x.len() as f64;
    let mut nk = vec![0.0; k];
    let mut sx = vec![0.0; k];
    let mut resp = Vec::with_capacity(x.len());
    for &xi in x {
        let dens: Vec<f64> = (0..k)
            .map(|j| w[j] / (2.0 * std::f64::consts::PI * v[j]).sqrt() * (-(xi - m[j]).powi(2) / (2.0 * v[j])).exp())
            .collect();
        let total: f64 = dens.iter().sum();
        let r: Vec<f64> = dens.iter().map(|d| d / total).collect();
        for j in 0..k {
            nk[j] += r[j];
            sx[j] += r[j] * xi;
        }
        resp.push(r);
    }
    let m2: Vec<f64> = (0..k).map(|j| sx[j] / nk[j]).collect();
    let mut sv = vec![0.0; k];
    for (xi, r) in x.iter().zip(&resp) {
        for j in 0..k {
            sv[j] += r[j] * (xi - m2[j]).powi(2);
        }
    }
    (
        nk.iter().map(|c| c / n).collect(),
        m2,
        (0..k).map(|j| sv[j] / nk[j]).collect(),
    )
}

/// Fraction of pairs on which two labelings agree, counted pair by pair.
pub fn brute_rand(a: &[usize], b: &[usize]) -> f64 {
    let mut agree = 0u64;
    let mut total = 0u64;
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            total += 1;
            if (a[i] == a[j]) == (b[i] == b[j]) {
                agree += 1;
            }
        }
    }
    agree as f64 / total as f64
}
