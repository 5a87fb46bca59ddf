//! Univariate Gaussian mixtures fitted by EM, optionally with bounds on the
//! gaps between adjacent means.
//!
//! The constrained fit is an ECM algorithm: after the E step the weights are
//! updated in closed form, then the means by a chain-constrained quadratic
//! program, then the variances in closed form given the new means. Each stage
//! maximizes the expected complete-data log-likelihood over its block, so the
//! observed log-likelihood never decreases.

use crate::constrained_qp::{self, validate_gaps, ChainQp, GapBound};
use crate::error::{Error, Result};
use crate::kmeans_dp::{kmeans_1d, KmeansSolution, SeparationDp, SIZE_LIMIT};
use crate::prefix_stats::{PrefixStats, SortedSample};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Relative variance floor: `v_k >= VARIANCE_FLOOR * var(x)`.
pub const VARIANCE_FLOOR: f64 = 1e-8;

/// Components whose responsibility mass falls below `DEGENERATE_MASS * N` are
/// frozen for the iteration.
pub const DEGENERATE_MASS: f64 = 1e-10;

/// Mixture parameters `(pi, mu, v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmParams {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

impl GmmParams {
    pub fn new(weights: Vec<f64>, means: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        let p = Self {
            weights,
            means,
            variances,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.weights.len();
        if k == 0 {
            return Err(Error::InvalidParams("no components".into()));
        }
        for got in [self.means.len(), self.variances.len()] {
            if got != k {
                return Err(Error::DimensionMismatch { expected: k, got });
            }
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidParams("weights must be positive".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParams(format!("weights sum to {total}, not 1")));
        }
        if self.means.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidParams("means must be finite".into()));
        }
        if self.variances.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidParams("variances must be positive".into()));
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    /// Largest absolute change over all parameters.
    pub fn max_abs_diff(&self, other: &GmmParams) -> f64 {
        let d = |a: &[f64], b: &[f64]| {
            a.iter()
                .zip(b)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0f64, f64::max)
        };
        d(&self.weights, &other.weights)
            .max(d(&self.means, &other.means))
            .max(d(&self.variances, &other.variances))
    }

    /// Components reordered by increasing mean, with the permutation applied.
    pub fn sorted_by_mean(&self) -> (GmmParams, Vec<usize>) {
        let mut order: Vec<usize> = (0..self.k()).collect();
        order.sort_by(|&a, &b| self.means[a].total_cmp(&self.means[b]));
        let pick = |v: &[f64]| order.iter().map(|&i| v[i]).collect();
        (
            GmmParams {
                weights: pick(&self.weights),
                means: pick(&self.means),
                variances: pick(&self.variances),
            },
            order,
        )
    }
}

/// Per-gap bounds `lo_k <= mu_{k+1} - mu_k <= hi_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparationBand {
    gaps: Vec<GapBound>,
}

impl SeparationBand {
    pub fn new(gaps: Vec<GapBound>) -> Result<Self> {
        validate_gaps(&gaps)?;
        Ok(Self { gaps })
    }

    /// The same bounds on each of the `k - 1` gaps.
    pub fn uniform(k: usize, lo: f64, hi: Option<f64>) -> Result<Self> {
        Self::new(vec![GapBound { lo, hi }; k.saturating_sub(1)])
    }

    /// Per-gap lists; a single value is broadcast to all `k - 1` gaps.
    pub fn from_lists(k: usize, lo: &[f64], hi: Option<&[f64]>) -> Result<Self> {
        let gaps = k.saturating_sub(1);
        let expand = |v: &[f64]| -> Result<Vec<f64>> {
            match v.len() {
                1 => Ok(vec![v[0]; gaps]),
                n if n == gaps => Ok(v.to_vec()),
                got => Err(Error::DimensionMismatch {
                    expected: gaps,
                    got,
                }),
            }
        };
        let lo = expand(lo)?;
        let hi = hi.map(expand).transpose()?;
        Self::new(
            (0..gaps)
                .map(|g| GapBound {
                    lo: lo[g],
                    hi: hi.as_ref().map(|h| h[g]),
                })
                .collect(),
        )
    }

    pub fn gaps(&self) -> &[GapBound] {
        &self.gaps
    }

    /// Common lower bound, if every gap has the same one.
    pub fn uniform_lower(&self) -> Option<f64> {
        let first = self.gaps.first()?.lo;
        self.gaps.iter().all(|g| g.lo == first).then_some(first)
    }

    pub fn has_upper(&self) -> bool {
        self.gaps.iter().any(|g| g.hi.is_some())
    }

    pub fn contains(&self, means: &[f64], tol: f64) -> bool {
        means.len() == self.gaps.len() + 1
            && self
                .gaps
                .iter()
                .enumerate()
                .all(|(k, g)| g.contains(means[k + 1] - means[k], tol))
    }
}

/// Posterior component probabilities, one row per point.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    k: usize,
    w: Vec<f64>,
}

impl Responsibilities {
    /// Row-major `N x K` matrix.
    pub fn from_rows(k: usize, w: Vec<f64>) -> Result<Self> {
        if k == 0 || !w.len().is_multiple_of(k) {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: w.len(),
            });
        }
        Ok(Self { k, w })
    }

    pub fn n(&self) -> usize {
        self.w.len() / self.k
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.w[i * self.k..(i + 1) * self.k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.w.chunks_exact(self.k)
    }

    /// `sum_i w_ik` for each component.
    pub fn column_mass(&self) -> Vec<f64> {
        let mut mass = vec![0.0; self.k];
        for row in self.rows() {
            for (m, w) in mass.iter_mut().zip(row) {
                *m += w;
            }
        }
        mass
    }

    /// `-sum_ik w_ik ln w_ik`.
    pub fn entropy(&self) -> f64 {
        -self
            .w
            .iter()
            .filter(|&&w| w > 0.0)
            .map(|w| w * w.ln())
            .sum::<f64>()
    }
}

#[inline]
fn log_density(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (LN_2PI + var.ln()) - (x - mean).powi(2) / (2.0 * var)
}

fn log_joint_row(x: f64, theta: &GmmParams, out: &mut [f64]) {
    for (k, o) in out.iter_mut().enumerate() {
        *o = theta.weights[k].ln() + log_density(x, theta.means[k], theta.variances[k]);
    }
}

/// `ln sum exp`, shifted by the maximum so nothing underflows to zero.
fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// Observed-data log-likelihood `sum_i ln sum_k pi_k f(x_i; mu_k, v_k)`.
pub fn log_likelihood(x: &[f64], theta: &GmmParams) -> f64 {
    let mut row = vec![0.0; theta.k()];
    x.iter()
        .map(|&xi| {
            log_joint_row(xi, theta, &mut row);
            log_sum_exp(&row)
        })
        .sum()
}

fn e_step_with_loglik(x: &[f64], theta: &GmmParams) -> (Responsibilities, f64) {
    let k = theta.k();
    let mut w = vec![0.0; x.len() * k];
    let mut loglik = 0.0;
    for (xi, row) in x.iter().zip(w.chunks_exact_mut(k)) {
        log_joint_row(*xi, theta, row);
        let lse = log_sum_exp(row);
        loglik += lse;
        for r in row.iter_mut() {
            *r = (*r - lse).exp();
        }
        let total: f64 = row.iter().sum();
        for r in row.iter_mut() {
            *r /= total;
        }
    }
    (Responsibilities { k, w }, loglik)
}

/// E step: `w_ik = pi_k f(x_i; mu_k, v_k) / sum_l pi_l f(x_i; mu_l, v_l)`,
/// evaluated in log space.
pub fn e_step(x: &[f64], theta: &GmmParams) -> Responsibilities {
    e_step_with_loglik(x, theta).0
}

/// `pi_k = (1/N) sum_i w_ik`.
pub fn m_step_weights(resp: &Responsibilities) -> Vec<f64> {
    let n = resp.n() as f64;
    resp.column_mass().into_iter().map(|m| m / n).collect()
}

fn degenerate(mass: &[f64], n: usize) -> Vec<bool> {
    mass.iter().map(|&m| m < DEGENERATE_MASS * n as f64).collect()
}

/// Responsibility-weighted means. Fails on a component with vanishing mass.
pub fn m_step_means_unconstrained(resp: &Responsibilities, x: &[f64]) -> Result<Vec<f64>> {
    let mass = resp.column_mass();
    if let Some(k) = degenerate(&mass, resp.n()).iter().position(|&d| d) {
        return Err(Error::DegenerateComponent(k));
    }
    Ok(weighted_means(resp, x, &mass))
}

fn weighted_means(resp: &Responsibilities, x: &[f64], mass: &[f64]) -> Vec<f64> {
    let mut sums = vec![0.0; resp.k()];
    for (row, &xi) in resp.rows().zip(x) {
        for (s, w) in sums.iter_mut().zip(row) {
            *s += w * xi;
        }
    }
    sums.iter().zip(mass).map(|(s, m)| s / m).collect()
}

/// The M-step quadratic program for the means:
/// `diag_k = sum_i w_ik / (2 v_k)`, `linear_k = sum_i w_ik x_i / (2 v_k)`.
pub fn mean_update_problem(
    resp: &Responsibilities,
    x: &[f64],
    variances: &[f64],
    band: &SeparationBand,
) -> Result<ChainQp> {
    let k = resp.k();
    if band.gaps().len() + 1 != k {
        return Err(Error::DimensionMismatch {
            expected: k - 1,
            got: band.gaps().len(),
        });
    }
    let mut diag = vec![0.0; k];
    let mut linear = vec![0.0; k];
    for (row, &xi) in resp.rows().zip(x) {
        for j in 0..k {
            let g = row[j] / (2.0 * variances[j]);
            diag[j] += g;
            linear[j] += g * xi;
        }
    }
    ChainQp::new(diag, linear, band.gaps().to_vec())
}

/// Means maximizing the expected complete-data log-likelihood subject to the
/// band, with variances held at `variances`.
pub fn m_step_means_constrained(
    resp: &Responsibilities,
    x: &[f64],
    variances: &[f64],
    band: &SeparationBand,
) -> Result<Vec<f64>> {
    let problem = mean_update_problem(resp, x, variances, band)?;
    Ok(constrained_qp::solve(&problem)?.mu)
}

/// `v_k = sum_i w_ik (x_i - mu_k)^2 / sum_i w_ik`, floored at `floor`.
pub fn m_step_variances(resp: &Responsibilities, x: &[f64], means: &[f64], floor: f64) -> Vec<f64> {
    let mass = resp.column_mass();
    let mut sums = vec![0.0; resp.k()];
    for (row, &xi) in resp.rows().zip(x) {
        for ((s, w), m) in sums.iter_mut().zip(row).zip(means) {
            *s += w * (xi - m).powi(2);
        }
    }
    sums.iter()
        .zip(&mass)
        .map(|(s, m)| (s / m).max(floor))
        .collect()
}

/// `Q(theta, theta_s) = sum_ik w_ik ln(pi_k f(x_i; mu_k, v_k))` for
/// responsibilities computed at `theta_s`.
pub fn q_function(x: &[f64], resp: &Responsibilities, theta: &GmmParams) -> f64 {
    let mut row = vec![0.0; theta.k()];
    let mut q = 0.0;
    for (&xi, w) in x.iter().zip(resp.rows()) {
        log_joint_row(xi, theta, &mut row);
        q += w
            .iter()
            .zip(&row)
            .filter(|(w, _)| **w > 0.0)
            .map(|(w, l)| w * l)
            .sum::<f64>();
    }
    q
}

/// Floor applied to every fitted variance.
pub fn variance_floor(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if var > 0.0 {
        VARIANCE_FLOOR * var
    } else {
        VARIANCE_FLOOR
    }
}

/// Most likely component of each point, lowest index on ties.
pub fn assign_labels(x: &[f64], theta: &GmmParams) -> Vec<usize> {
    let mut row = vec![0.0; theta.k()];
    x.iter()
        .map(|&xi| {
            log_joint_row(xi, theta, &mut row);
            let mut best = 0;
            for k in 1..row.len() {
                if row[k] > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Starting point built from an optimal K-means partition.
#[derive(Debug, Clone, PartialEq)]
pub struct Initialization {
    pub params: GmmParams,
    /// The separated K-means was used.
    pub separated: bool,
    /// Separated K-means was requested but infeasible (or too large), and the
    /// unconstrained partition was used instead.
    pub fallback: bool,
    /// Means were projected onto the band.
    pub projected: bool,
}

fn params_from_partition(solution: &KmeansSolution, stats: &PrefixStats, floor: f64) -> GmmParams {
    let n = stats.len() as f64;
    let mut variances = Vec::with_capacity(solution.k());
    for (c, &s) in solution.boundaries().iter().enumerate() {
        let e = s + solution.sizes()[c] - 1;
        variances.push((stats.ssq(s, e) / solution.sizes()[c] as f64).max(floor));
    }
    GmmParams {
        weights: solution.sizes().iter().map(|&s| s as f64 / n).collect(),
        means: solution.centers().to_vec(),
        variances,
    }
}

/// Initialize from 1D optimal K-means: separated K-means when the band has a
/// common positive lower bound, plain K-means otherwise. Means outside the
/// band are projected onto it (unit weights).
pub fn init_from_kmeans(sample: &SortedSample, k: usize, band: Option<&SeparationBand>) -> Result<Initialization> {
    let stats = PrefixStats::new(sample);
    let floor = variance_floor(sample.values());
    let lower = band.and_then(SeparationBand::uniform_lower).filter(|&d| d > 0.0);
    let mut init = Initialization {
        params: GmmParams {
            weights: vec![],
            means: vec![],
            variances: vec![],
        },
        separated: false,
        fallback: false,
        projected: false,
    };
    let separated = match lower {
        Some(delta) if sample.len() <= SIZE_LIMIT => SeparationDp::new(delta).solve(&stats, k)?,
        _ => None,
    };
    let solution = match separated {
        Some(s) => {
            init.separated = true;
            s
        }
        None => {
            init.fallback = lower.is_some();
            kmeans_1d(&stats, k)?
        }
    };
    init.params = params_from_partition(&solution, &stats, floor);
    if let Some(band) = band {
        if band.gaps().len() + 1 != k {
            return Err(Error::DimensionMismatch {
                expected: k - 1,
                got: band.gaps().len(),
            });
        }
        if !band.contains(&init.params.means, 1e-9) {
            let qp = ChainQp::from_targets(vec![1.0; k], &init.params.means, band.gaps().to_vec())?;
            init.params.means = constrained_qp::solve(&qp)?.mu;
            init.projected = true;
        }
    }
    Ok(init)
}

/// Everything one ECM iteration produces.
#[derive(Debug, Clone)]
pub struct EcmStep {
    /// `L(theta_s)`, a by-product of the E step.
    pub loglik: f64,
    pub resp: Responsibilities,
    /// `(pi_{s+1}, mu_s, v_s)`
    pub after_weights: GmmParams,
    /// `(pi_{s+1}, mu_{s+1}, v_s)`
    pub after_means: GmmParams,
    /// `(pi_{s+1}, mu_{s+1}, v_{s+1})`
    pub after_variances: GmmParams,
    /// Components frozen for vanishing mass.
    pub frozen: Vec<usize>,
}

/// One E step followed by the three conditional maximizations.
pub fn ecm_step(x: &[f64], theta: &GmmParams, band: Option<&SeparationBand>, floor: f64) -> Result<EcmStep> {
    let k = theta.k();
    let n = x.len();
    let (resp, loglik) = e_step_with_loglik(x, theta);
    let mass = resp.column_mass();
    let frozen_mask = degenerate(&mass, n);
    let frozen: Vec<usize> = (0..k).filter(|&j| frozen_mask[j]).collect();

    let mut weights = m_step_weights(&resp);
    if !frozen.is_empty() {
        for &j in &frozen {
            weights[j] = DEGENERATE_MASS;
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
    }
    let after_weights = GmmParams {
        weights,
        means: theta.means.clone(),
        variances: theta.variances.clone(),
    };

    let means = match band {
        None => {
            let mut m = weighted_means(&resp, x, &mass);
            for &j in &frozen {
                m[j] = theta.means[j];
            }
            m
        }
        Some(band) if frozen.is_empty() => m_step_means_constrained(&resp, x, &theta.variances, band)?,
        Some(band) => {
            let mut problem = mean_update_problem(&resp, x, &theta.variances, band)?;
            // Anchor frozen components weakly at their current means.
            let mut diag = problem.diag().to_vec();
            let mut linear = problem.linear().to_vec();
            for &j in &frozen {
                diag[j] = DEGENERATE_MASS * n as f64 / (2.0 * theta.variances[j]);
                linear[j] = diag[j] * theta.means[j];
            }
            problem = ChainQp::new(diag, linear, band.gaps().to_vec())?;
            constrained_qp::solve(&problem)?.mu
        }
    };
    let after_means = GmmParams {
        means,
        ..after_weights.clone()
    };

    let mut variances = m_step_variances(&resp, x, &after_means.means, floor);
    for &j in &frozen {
        variances[j] = theta.variances[j];
    }
    let after_variances = GmmParams {
        variances,
        ..after_means.clone()
    };
    Ok(EcmStep {
        loglik,
        resp,
        after_weights,
        after_means,
        after_variances,
        frozen,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmConfig {
    /// Stop once no parameter moves by more than this.
    pub gamma: f64,
    pub max_iter: usize,
    /// `None` runs the regular EM algorithm.
    pub band: Option<SeparationBand>,
    /// Record the parameters after every iteration.
    pub keep_history: bool,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            gamma: 1e-6,
            max_iter: 1000,
            band: None,
            keep_history: false,
        }
    }
}

impl EmConfig {
    pub fn with_band(mut self, band: Option<SeparationBand>) -> Self {
        self.band = band;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: GmmParams,
    /// `L(theta_0), L(theta_1), ...`, one entry more than `iterations`.
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Most likely component per point, in the order the data were given.
    pub labels: Vec<usize>,
    pub init: Option<Initialization>,
    /// Iterations in which some component was frozen.
    pub degenerate_iterations: usize,
    /// Parameters after each iteration when `keep_history` is set.
    pub history: Vec<GmmParams>,
}

impl FitResult {
    /// Whether the trace never drops by more than `slack`.
    pub fn is_monotone(&self, slack: f64) -> bool {
        self.loglik_trace.windows(2).all(|w| w[1] >= w[0] - slack)
    }
}

/// Fit a `k`-component mixture, initialized from optimal K-means.
pub fn fit(sample: &SortedSample, k: usize, config: &EmConfig) -> Result<FitResult> {
    if k == 0 || k > sample.len() {
        return Err(Error::InvalidClusterCount { k, n: sample.len() });
    }
    let init = init_from_kmeans(sample, k, config.band.as_ref())?;
    let mut result = fit_from(sample.values(), init.params.clone(), config)?;
    result.init = Some(init);
    Ok(result)
}

/// Fit from explicit starting parameters.
pub fn fit_from(x: &[f64], init: GmmParams, config: &EmConfig) -> Result<FitResult> {
    if x.is_empty() {
        return Err(Error::EmptySample);
    }
    if !(config.gamma > 0.0) {
        return Err(Error::InvalidParams(format!("gamma must be positive, got {}", config.gamma)));
    }
    init.validate()?;
    let band = config.band.as_ref();
    if let Some(b) = band {
        if b.gaps().len() + 1 != init.k() {
            return Err(Error::DimensionMismatch {
                expected: init.k() - 1,
                got: b.gaps().len(),
            });
        }
    }
    let floor = variance_floor(x);
    let mut theta = init;
    let mut trace = Vec::new();
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut degenerate_iterations = 0;
    while iterations < config.max_iter {
        let step = ecm_step(x, &theta, band, floor)?;
        trace.push(step.loglik);
        if !step.frozen.is_empty() {
            degenerate_iterations += 1;
        }
        let change = theta.max_abs_diff(&step.after_variances);
        theta = step.after_variances;
        iterations += 1;
        if config.keep_history {
            history.push(theta.clone());
        }
        if change <= config.gamma {
            converged = true;
            break;
        }
    }
    trace.push(log_likelihood(x, &theta));
    Ok(FitResult {
        labels: assign_labels(x, &theta),
        params: theta,
        loglik_trace: trace,
        iterations,
        converged,
        init: None,
        degenerate_iterations,
        history,
    })
}
