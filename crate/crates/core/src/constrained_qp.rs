//! Diagonal quadratic programs with bounds on adjacent differences.
//!
//! ```text
//!     minimize    sum_k d_k mu_k^2 - 2 sum_k l_k mu_k
//!     subject to  lo_k <= mu_{k+1} - mu_k <= hi_k,   k = 0..K-1
//! ```
//!
//! [`solve`] is a dual active-set method in the style of Goldfarb and Idnani:
//! start from the unconstrained minimizer, repeatedly add the most violated
//! constraint, and drop active constraints whose multipliers would turn
//! negative. Gaps with `lo == hi` enter as equalities and are never dropped;
//! absent upper bounds contribute no row at all.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Bounds on one adjacent difference `mu[k+1] - mu[k]`. `hi: None` is `+inf`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapBound {
    pub lo: f64,
    pub hi: Option<f64>,
}

impl GapBound {
    pub fn at_least(lo: f64) -> Self {
        Self { lo, hi: None }
    }

    pub fn between(lo: f64, hi: f64) -> Self {
        Self { lo, hi: Some(hi) }
    }

    pub fn contains(&self, gap: f64, tol: f64) -> bool {
        gap >= self.lo - tol && self.hi.is_none_or(|h| gap <= h + tol)
    }
}

/// A validated chain-constrained QP.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainQp {
    diag: Vec<f64>,
    linear: Vec<f64>,
    gaps: Vec<GapBound>,
}

impl ChainQp {
    pub fn new(diag: Vec<f64>, linear: Vec<f64>, gaps: Vec<GapBound>) -> Result<Self> {
        let k = diag.len();
        if k == 0 {
            return Err(Error::InvalidParams("empty problem".into()));
        }
        if linear.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: linear.len(),
            });
        }
        if gaps.len() != k - 1 {
            return Err(Error::DimensionMismatch {
                expected: k - 1,
                got: gaps.len(),
            });
        }
        if let Some((index, &value)) = diag.iter().enumerate().find(|(_, d)| !(d.is_finite() && **d > 0.0)) {
            return Err(Error::NonPositiveDiagonal { index, value });
        }
        if linear.iter().any(|l| !l.is_finite()) {
            return Err(Error::InvalidParams("non-finite linear term".into()));
        }
        validate_gaps(&gaps)?;
        Ok(Self { diag, linear, gaps })
    }

    /// Build from per-coordinate targets: the objective becomes
    /// `sum_k d_k (mu_k - target_k)^2` up to a constant.
    pub fn from_targets(diag: Vec<f64>, targets: &[f64], gaps: Vec<GapBound>) -> Result<Self> {
        let linear = diag.iter().zip(targets).map(|(d, t)| d * t).collect();
        Self::new(diag, linear, gaps)
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn linear(&self) -> &[f64] {
        &self.linear
    }

    pub fn gaps(&self) -> &[GapBound] {
        &self.gaps
    }

    /// Unconstrained minimizer `l_k / d_k`.
    pub fn targets(&self) -> Vec<f64> {
        self.linear.iter().zip(&self.diag).map(|(l, d)| l / d).collect()
    }

    pub fn objective(&self, mu: &[f64]) -> f64 {
        mu.iter()
            .zip(&self.diag)
            .zip(&self.linear)
            .map(|((m, d), l)| d * m * m - 2.0 * l * m)
            .sum()
    }

    pub fn is_feasible(&self, mu: &[f64], tol: f64) -> bool {
        mu.len() == self.dim()
            && self
                .gaps
                .iter()
                .enumerate()
                .all(|(k, g)| g.contains(mu[k + 1] - mu[k], tol))
    }
}

pub(crate) fn validate_gaps(gaps: &[GapBound]) -> Result<()> {
    for (index, g) in gaps.iter().enumerate() {
        if !g.lo.is_finite() {
            return Err(Error::InvalidParams(format!("gap {index}: lower bound must be finite")));
        }
        if let Some(hi) = g.hi {
            if hi.is_nan() || hi < g.lo {
                return Err(Error::InvertedBand { index, lo: g.lo, hi });
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Lower,
    Upper,
    /// `lo == hi`, handled as an equality.
    Fixed,
}

/// A constraint that is active at the solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Binding {
    pub gap: usize,
    pub side: Side,
    pub multiplier: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub mu: Vec<f64>,
    pub active_set: Vec<Binding>,
    pub kkt_residual: f64,
    /// Constraint additions and drops performed.
    pub iterations: usize,
}

/// One row `sign * (mu[gap+1] - mu[gap]) >= rhs`.
#[derive(Debug, Clone, Copy)]
struct Row {
    gap: usize,
    sign: f64,
    rhs: f64,
    side: Side,
}

impl Row {
    fn slack(&self, x: &[f64]) -> f64 {
        self.sign * (x[self.gap + 1] - x[self.gap]) - self.rhs
    }

    fn dot(&self, v: &[f64]) -> f64 {
        self.sign * (v[self.gap + 1] - v[self.gap])
    }

    fn is_equality(&self) -> bool {
        self.side == Side::Fixed
    }
}

fn rows_of(gaps: &[GapBound]) -> Vec<Row> {
    let mut rows = Vec::new();
    for (gap, g) in gaps.iter().enumerate() {
        match g.hi {
            Some(hi) if hi == g.lo => rows.push(Row {
                gap,
                sign: 1.0,
                rhs: g.lo,
                side: Side::Fixed,
            }),
            hi => {
                rows.push(Row {
                    gap,
                    sign: 1.0,
                    rhs: g.lo,
                    side: Side::Lower,
                });
                if let Some(hi) = hi {
                    rows.push(Row {
                        gap,
                        sign: -1.0,
                        rhs: -hi,
                        side: Side::Upper,
                    });
                }
            }
        }
    }
    rows
}

/// Primal and dual step directions for adding `p` to the active set.
///
/// With `H^-1 = diag(1 / 2d)` and active normals `N`:
/// `r = (N' H^-1 N)^-1 N' H^-1 n_p`, `z = H^-1 (n_p - N r)`.
fn directions(hinv: &[f64], rows: &[Row], active: &[usize], p: &Row) -> (Vec<f64>, Vec<f64>) {
    let k = hinv.len();
    let normal = |row: &Row| {
        let mut n = vec![0.0; k];
        n[row.gap] = -row.sign;
        n[row.gap + 1] = row.sign;
        n
    };
    let np = normal(p);
    let q = active.len();
    let r = if q == 0 {
        Vec::new()
    } else {
        let scaled: Vec<Vec<f64>> = active
            .iter()
            .map(|&a| normal(&rows[a]).iter().zip(hinv).map(|(n, h)| n * h).collect())
            .collect();
        let m = DMatrix::from_fn(q, q, |i, j| rows[active[j]].dot(&scaled[i]));
        let rhs = DVector::from_fn(q, |i, _| p.dot(&scaled[i]));
        // Active normals touch distinct gaps, so they are independent and M is SPD.
        let chol = m.cholesky().expect("active constraint normals are independent");
        chol.solve(&rhs).iter().copied().collect()
    };
    let mut z: Vec<f64> = np.clone();
    for (&a, &ra) in active.iter().zip(&r) {
        let row = &rows[a];
        z[row.gap] += ra * row.sign;
        z[row.gap + 1] -= ra * row.sign;
    }
    for (zi, h) in z.iter_mut().zip(hinv) {
        *zi *= h;
    }
    (z, r)
}

/// Solve the QP exactly (up to rounding) in finitely many active-set changes.
pub fn solve(problem: &ChainQp) -> Result<QpSolution> {
    let k = problem.dim();
    let hinv: Vec<f64> = problem.diag.iter().map(|d| 0.5 / d).collect();
    let mut x = problem.targets();
    let mut rows = rows_of(&problem.gaps);
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut iterations = 0;
    let max_iterations = 50 * (rows.len() + 1);

    loop {
        let scale = 1.0 + x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let tol = |row: &Row| 1e-12 * (scale + row.rhs.abs());

        // Equalities first, then the most violated inequality.
        let pending_eq = (0..rows.len()).find(|&i| rows[i].is_equality() && !active.contains(&i));
        let p = pending_eq.or_else(|| {
            (0..rows.len())
                .filter(|i| !active.contains(i))
                .map(|i| (i, rows[i].slack(&x)))
                .filter(|&(i, s)| s < -tol(&rows[i]))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(i, _)| i)
        });
        let Some(p) = p else { break };
        if rows[p].is_equality() && rows[p].slack(&x) > 0.0 {
            rows[p].sign = -rows[p].sign;
            rows[p].rhs = -rows[p].rhs;
        }

        let mut u_new = 0.0;
        loop {
            iterations += 1;
            if iterations > max_iterations {
                return Err(Error::InvalidParams(
                    "active-set iteration limit reached".into(),
                ));
            }
            let row = rows[p];
            let (z, r) = directions(&hinv, &rows, &active, &row);

            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for (idx, (&a, &ra)) in active.iter().zip(&r).enumerate() {
                if !rows[a].is_equality() && ra > 0.0 {
                    let ratio = u[idx] / ra;
                    if ratio < t1 {
                        t1 = ratio;
                        drop = Some(idx);
                    }
                }
            }
            let zn = row.dot(&z);
            let curvature = row.sign * row.sign * (hinv[row.gap] + hinv[row.gap + 1]);
            let t2 = if zn > 1e-13 * curvature {
                -row.slack(&x) / zn
            } else {
                f64::INFINITY
            };
            let t = t1.min(t2);
            if t.is_infinite() {
                return Err(Error::Infeasible);
            }
            for (ui, ri) in u.iter_mut().zip(&r) {
                *ui -= t * ri;
            }
            u_new += t;
            if t2.is_finite() {
                for (xi, zi) in x.iter_mut().zip(&z) {
                    *xi += t * zi;
                }
            }
            if t2 <= t1 {
                active.push(p);
                u.push(u_new);
                break;
            }
            let idx = drop.expect("partial step has a blocking constraint");
            active.remove(idx);
            u.remove(idx);
        }
    }

    let polished = polish(problem, &rows, &active);
    if max_violation(problem, &polished) <= max_violation(problem, &x) {
        x = polished;
    }

    let mut active_set: Vec<Binding> = active
        .iter()
        .zip(&u)
        .map(|(&a, &m)| Binding {
            gap: rows[a].gap,
            side: rows[a].side,
            multiplier: if rows[a].is_equality() { m * rows[a].sign } else { m },
        })
        .collect();
    active_set.sort_by_key(|b| b.gap);
    debug_assert_eq!(x.len(), k);
    let kkt_residual = verify_kkt(problem, &x);
    Ok(QpSolution {
        mu: x,
        active_set,
        kkt_residual,
        iterations,
    })
}

/// Recompute the solution from its active set. Active gaps are pinned to
/// their bounds, gluing components into rigid blocks, and each block sits at
/// the weighted mean of its members' shifted targets. Unlike the dual
/// updates this never divides by a single small diagonal entry.
fn polish(problem: &ChainQp, rows: &[Row], active: &[usize]) -> Vec<f64> {
    let k = problem.dim();
    let mut pinned: Vec<Option<f64>> = vec![None; k.saturating_sub(1)];
    for &a in active {
        let row = &rows[a];
        pinned[row.gap] = Some(row.sign * row.rhs);
    }
    let mut mu = vec![0.0; k];
    let mut start = 0;
    while start < k {
        let mut offsets = vec![0.0];
        let mut end = start;
        while end + 1 < k {
            let Some(step) = pinned[end] else { break };
            offsets.push(offsets[end - start] + step);
            end += 1;
        }
        let (mut num, mut den) = (0.0, 0.0);
        for j in start..=end {
            num += problem.linear[j] - problem.diag[j] * offsets[j - start];
            den += problem.diag[j];
        }
        let c = num / den;
        for j in start..=end {
            mu[j] = c + offsets[j - start];
        }
        start = end + 1;
    }
    mu
}

fn max_violation(problem: &ChainQp, mu: &[f64]) -> f64 {
    problem
        .gaps
        .iter()
        .enumerate()
        .map(|(j, g)| {
            let diff = mu[j + 1] - mu[j];
            (g.lo - diff).max(g.hi.map_or(f64::NEG_INFINITY, |h| diff - h))
        })
        .fold(0.0, f64::max)
}

/// Max-norm KKT violation of `mu`.
///
/// The multipliers are recovered exactly: stationarity
/// `2 d_j mu_j - 2 l_j = nu_{j-1} - nu_j` (with `nu` the net multiplier of gap
/// `j`, lower minus upper) fixes `nu` by cumulative sums of the gradient, and
/// the last component must close the chain. Positive `nu` is charged to the
/// lower bound and negative `nu` to the upper bound.
pub fn verify_kkt(problem: &ChainQp, mu: &[f64]) -> f64 {
    let k = problem.dim();
    if mu.len() != k {
        return f64::INFINITY;
    }
    let grad: Vec<f64> = (0..k)
        .map(|j| 2.0 * problem.diag[j] * mu[j] - 2.0 * problem.linear[j])
        .collect();
    let mut worst = 0.0f64;
    let mut nu = 0.0;
    for (j, gap) in problem.gaps.iter().enumerate() {
        nu -= grad[j];
        let diff = mu[j + 1] - mu[j];
        worst = worst.max(gap.lo - diff);
        if let Some(hi) = gap.hi {
            worst = worst.max(diff - hi);
        }
        if nu >= 0.0 {
            worst = worst.max(nu * (diff - gap.lo).abs());
        } else {
            match gap.hi {
                Some(hi) => worst = worst.max(-nu * (hi - diff).abs()),
                None => worst = worst.max(-nu),
            }
        }
    }
    // nu_{K-1} must vanish: the last gradient entry equals the last multiplier.
    worst.max((grad[k - 1] - nu).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn qp(diag: &[f64], targets: &[f64], gaps: &[GapBound]) -> ChainQp {
        ChainQp::from_targets(diag.to_vec(), targets, gaps.to_vec()).unwrap()
    }

    #[test]
    fn slack_constraint_returns_targets() {
        let p = qp(&[1.0, 1.0], &[0.0, 5.0], &[GapBound::at_least(2.0)]);
        let s = solve(&p).unwrap();
        assert_eq!(s.mu, vec![0.0, 5.0]);
        assert!(s.active_set.is_empty());
        assert_eq!(verify_kkt(&p, &s.mu), 0.0);
    }

    #[test]
    fn tiny_weight_stays_feasible() {
        let gaps = [GapBound::between(0.019023, 0.029023), GapBound::between(0.00895, 0.01895)];
        let p = qp(&[1.3e4, 1.3e-6, 1.1e4], &[1.64, 1.60, 1.71], &gaps);
        let s = solve(&p).unwrap();
        assert!(p.is_feasible(&s.mu, 1e-14), "{:?}", s.mu);
        assert!(s.kkt_residual < 1e-8);
    }

    #[test]
    fn binding_lower_bound_by_hand() {
        let p = qp(&[1.0, 1.0], &[0.0, 1.0], &[GapBound::at_least(2.0)]);
        let s = solve(&p).unwrap();
        assert_abs_diff_eq!(s.mu[0], -0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(s.mu[1], 1.5, epsilon = 1e-12);
        assert_eq!(s.active_set.len(), 1);
        assert_eq!(s.active_set[0].side, Side::Lower);
        assert_abs_diff_eq!(s.active_set[0].multiplier, 1.0, epsilon = 1e-12);
        assert!(verify_kkt(&p, &[-0.5, 1.5]) <= 1e-12);
        assert!(verify_kkt(&p, &[-0.4, 1.6]) > 0.01);
    }

    #[test]
    fn binding_upper_bound() {
        let p = qp(&[1.0, 3.0], &[0.0, 4.0], &[GapBound::between(0.0, 2.0)]);
        let s = solve(&p).unwrap();
        // minimize (a)^2 + 3 (a + 2 - 4)^2 -> a = 1.5
        assert_abs_diff_eq!(s.mu[0], 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(s.mu[1], 3.5, epsilon = 1e-12);
        assert_eq!(s.active_set[0].side, Side::Upper);
        assert!(s.kkt_residual <= 1e-12);
    }

    #[test]
    fn rigid_chain_closed_form() {
        let diag = [1.0, 2.0, 0.5, 4.0];
        let targets = [3.0, -1.0, 2.0, 0.0];
        let offsets = [0.0, 1.0, 1.5, 4.0];
        let gaps: Vec<GapBound> = offsets.windows(2).map(|w| GapBound::between(w[1] - w[0], w[1] - w[0])).collect();
        let p = qp(&diag, &targets, &gaps);
        let s = solve(&p).unwrap();
        let base = diag.iter().zip(&targets).zip(&offsets).map(|((d, t), o)| d * (t - o)).sum::<f64>()
            / diag.iter().sum::<f64>();
        for (m, o) in s.mu.iter().zip(&offsets) {
            assert_abs_diff_eq!(*m, base + o, epsilon = 1e-12);
        }
        assert!(s.active_set.iter().all(|b| b.side == Side::Fixed));
    }

    #[test]
    fn rejects_invalid_problems() {
        assert!(matches!(
            ChainQp::new(vec![1.0, 0.0], vec![0.0, 0.0], vec![GapBound::at_least(0.0)]),
            Err(Error::NonPositiveDiagonal { index: 1, .. })
        ));
        assert!(matches!(
            ChainQp::new(vec![1.0, 1.0], vec![0.0, 0.0], vec![GapBound::between(2.0, 1.0)]),
            Err(Error::InvertedBand { index: 0, .. })
        ));
        assert!(matches!(
            ChainQp::new(vec![1.0, 1.0], vec![0.0], vec![]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn single_coordinate() {
        let p = qp(&[2.0], &[3.0], &[]);
        assert_eq!(solve(&p).unwrap().mu, vec![3.0]);
    }

    fn problem() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<GapBound>)> {
        (1usize..=6).prop_flat_map(|k| {
            (
                prop::collection::vec(0.1f64..10.0, k),
                prop::collection::vec(-5.0f64..5.0, k),
                prop::collection::vec((-1.0f64..3.0, prop::option::of(0.0f64..2.0)), k - 1),
            )
                .prop_map(|(d, t, g)| {
                    let gaps = g.into_iter().map(|(lo, w)| GapBound { lo, hi: w.map(|w| lo + w) }).collect();
                    (d, t, gaps)
                })
        })
    }

    proptest! {
        #[test]
        fn translation_equivariance((d, t, g) in problem(), shift in -10.0f64..10.0) {
            let a = solve(&qp(&d, &t, &g)).unwrap();
            let moved: Vec<f64> = t.iter().map(|v| v + shift).collect();
            let b = solve(&qp(&d, &moved, &g)).unwrap();
            for (x, y) in a.mu.iter().zip(&b.mu) {
                prop_assert!((x + shift - y).abs() <= 1e-9);
            }
        }

        #[test]
        fn scale_equivariance((d, t, g) in problem(), c in 0.1f64..10.0) {
            let a = solve(&qp(&d, &t, &g)).unwrap();
            let tt: Vec<f64> = t.iter().map(|v| v * c).collect();
            let gg: Vec<GapBound> = g.iter().map(|b| GapBound { lo: b.lo * c, hi: b.hi.map(|h| h * c) }).collect();
            let b = solve(&qp(&d, &tt, &gg)).unwrap();
            for (x, y) in a.mu.iter().zip(&b.mu) {
                prop_assert!((x * c - y).abs() <= 1e-9 * (1.0 + y.abs()));
            }
        }
    }
}
