//! Simulation harness: mixture models, seeded replicates, result tables and
//! separation sweeps.
//!
//! Replicate `r` draws its sample from `ChaCha8Rng::seed_from_u64(seed + r)`,
//! so every method (and every grid point of a sweep) sees the same data.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm_em::{fit_from, init_from_kmeans, EmConfig, GmmParams, SeparationBand};
use crate::kmeans_dp::{kmeans_1d, kmeans_1d_sep};
use crate::metrics::{all_params_error_avg, center_error_avg, center_error_total, rand_index, size_error_total};
use crate::prefix_stats::{PrefixStats, SortedSample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub mean: f64,
    pub sd: f64,
}

/// A univariate Gaussian mixture to simulate from.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureModelSpec {
    pub name: String,
    pub components: Vec<Component>,
}

impl MixtureModelSpec {
    pub fn new(name: impl Into<String>, components: Vec<Component>) -> Result<Self> {
        let spec = Self {
            name: name.into(),
            components,
        };
        spec.truth()?;
        if spec.components.windows(2).any(|w| !(w[1].mean > w[0].mean)) {
            return Err(Error::InvalidParams("means must be strictly increasing".into()));
        }
        Ok(spec)
    }

    /// One of the built-in models `A`, `B`, `C`, `D`.
    pub fn named(name: &str) -> Result<Self> {
        let c = |weight, mean, sd| Component { weight, mean, sd };
        let components = match name.to_ascii_uppercase().as_str() {
            "A" => vec![c(0.333, 0.0, 1.0), c(0.667, 2.0, 1.0)],
            "B" => vec![c(0.45, 0.0, 0.75), c(0.1, 2.0, 1.5), c(0.45, 4.0, 0.75)],
            "C" => (0..5).map(|i| c(0.2, 2.0 * i as f64, 1.0)).collect(),
            "D" => vec![
                c(0.1, 0.0, 0.25),
                c(0.2, 2.0, 0.75),
                c(0.4, 4.0, 1.25),
                c(0.2, 6.0, 0.75),
                c(0.1, 8.0, 0.25),
            ],
            _ => return Err(Error::InvalidParams(format!("unknown model `{name}`"))),
        };
        Self::new(name.to_ascii_uppercase(), components)
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    /// The model as mixture parameters (variances, not sds).
    pub fn truth(&self) -> Result<GmmParams> {
        GmmParams::new(
            self.components.iter().map(|c| c.weight).collect(),
            self.components.iter().map(|c| c.mean).collect(),
            self.components.iter().map(|c| c.sd * c.sd).collect(),
        )
    }
}

/// Simulated data in sorted order with the generating component of each point.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedSample {
    pub sample: SortedSample,
    /// Component of each sorted point, 0-based.
    pub labels: Vec<usize>,
    pub sizes: Vec<usize>,
}

/// `n` iid draws: a component by its weight, then a normal draw from it.
pub fn sample_model(spec: &MixtureModelSpec, n: usize, seed: u64) -> Result<SimulatedSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cumulative = Vec::with_capacity(spec.k());
    let mut acc = 0.0;
    for c in &spec.components {
        acc += c.weight;
        cumulative.push(acc);
    }
    let mut x = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut sizes = vec![0; spec.k()];
    for _ in 0..n {
        let u: f64 = rng.random::<f64>() * acc;
        let k = cumulative.iter().position(|&c| u < c).unwrap_or(spec.k() - 1);
        let z: f64 = rng.sample(StandardNormal);
        let c = spec.components[k];
        x.push(c.mean + c.sd * z);
        labels.push(k);
        sizes[k] += 1;
    }
    let sample = SortedSample::new(x)?;
    let labels = sample.permutation().iter().map(|&i| labels[i]).collect();
    Ok(SimulatedSample { sample, labels, sizes })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Kmeans,
    KmeansSep,
    Em,
    EmSepOneSided,
    EmSepTwoSided,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Kmeans,
        Method::KmeansSep,
        Method::Em,
        Method::EmSepOneSided,
        Method::EmSepTwoSided,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Kmeans => "kmeans",
            Method::KmeansSep => "kmeans_sep",
            Method::Em => "em",
            Method::EmSepOneSided => "em_sep_one_sided",
            Method::EmSepTwoSided => "em_sep_two_sided",
        }
    }

    pub fn is_em(self) -> bool {
        matches!(self, Method::Em | Method::EmSepOneSided | Method::EmSepTwoSided)
    }

    /// Criteria reported for this method.
    pub fn criteria(self) -> &'static [Criterion] {
        if self.is_em() {
            &[Criterion::CenterErrorAvg, Criterion::AllParamsError, Criterion::RandIndex]
        } else {
            &[Criterion::CenterError, Criterion::SizeError, Criterion::RandIndex]
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidParams(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Criterion {
    /// `sum_k |mu-hat_k - mu_k|`
    CenterError,
    /// `sum_k |n-hat_k - n_k|`
    SizeError,
    /// `(1/K) sum_k |mu-hat_k - mu_k|`
    CenterErrorAvg,
    AllParamsError,
    RandIndex,
}

impl Criterion {
    pub fn name(self) -> &'static str {
        match self {
            Criterion::CenterError => "center_error",
            Criterion::SizeError => "size_error",
            Criterion::CenterErrorAvg => "center_error_avg",
            Criterion::AllParamsError => "all_params_error",
            Criterion::RandIndex => "rand_index",
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How the regular EM is started.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmInit {
    /// Same start as the constrained EM: separated K-means at `delta`.
    #[default]
    Separated,
    /// Plain optimal K-means.
    Unconstrained,
}

fn default_n() -> usize {
    500
}
fn default_replicates() -> usize {
    100
}
fn default_band_width() -> f64 {
    0.2
}
fn default_gamma() -> f64 {
    1e-6
}
fn default_max_iter() -> usize {
    1000
}

/// Flat key-value experiment description, usually read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// `A`, `B`, `C` or `D`.
    pub model: String,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    pub methods: Vec<Method>,
    /// Lower bound on every gap.
    #[serde(default)]
    pub delta: f64,
    /// Two-sided methods use `[delta, delta + band_width]`.
    #[serde(default = "default_band_width")]
    pub band_width: f64,
    #[serde(default)]
    pub em_init: EmInit,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub grid_start: Option<f64>,
    #[serde(default)]
    pub grid_stop: Option<f64>,
    #[serde(default)]
    pub grid_step: Option<f64>,
    #[serde(default)]
    pub curves_output: Option<PathBuf>,
}

fn config_error(key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        message: message.into(),
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| {
            let key = e
                .span()
                .and_then(|span| {
                    let line_start = text[..span.start].rfind('\n').map_or(0, |i| i + 1);
                    let line = text[line_start..].lines().next()?;
                    line.split_once('=').map(|(k, _)| k.trim().to_string())
                })
                .or_else(|| {
                    let msg = e.message();
                    let start = msg.find('`')? + 1;
                    let len = msg[start..].find('`')?;
                    Some(msg[start..start + len].to_string())
                })
                .unwrap_or_default();
            config_error(&key, e.message())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn model_spec(&self) -> Result<MixtureModelSpec> {
        MixtureModelSpec::named(&self.model).map_err(|e| config_error("model", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let spec = self.model_spec()?;
        if self.replicates == 0 {
            return Err(config_error("replicates", "must be at least 1"));
        }
        if self.n < spec.k() {
            return Err(config_error("n", format!("must be at least K = {}", spec.k())));
        }
        if self.methods.is_empty() {
            return Err(config_error("methods", "no methods given"));
        }
        if !(self.delta.is_finite() && self.delta >= 0.0) {
            return Err(config_error("delta", "must be finite and nonnegative"));
        }
        if !(self.band_width.is_finite() && self.band_width >= 0.0) {
            return Err(config_error("band_width", "must be finite and nonnegative"));
        }
        if !(self.gamma > 0.0) {
            return Err(config_error("gamma", "must be positive"));
        }
        Ok(())
    }

    /// The separation grid of a sweep, `grid_start..=grid_stop` by `grid_step`.
    pub fn grid(&self) -> Result<Vec<f64>> {
        let start = self.grid_start.ok_or_else(|| config_error("grid_start", "missing"))?;
        let stop = self.grid_stop.unwrap_or(start);
        let step = self.grid_step.unwrap_or(1.0);
        if !(start.is_finite() && start >= 0.0) {
            return Err(config_error("grid_start", "must be finite and nonnegative"));
        }
        if !(stop.is_finite() && stop >= start) {
            return Err(config_error("grid_stop", "must be at least grid_start"));
        }
        if !(step.is_finite() && step > 0.0) {
            return Err(config_error("grid_step", "must be positive"));
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize;
        // Rounded so grid points print as typed.
        Ok((0..=count)
            .map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9)
            .collect())
    }

    fn one_sided(&self, k: usize, delta: f64) -> Result<SeparationBand> {
        SeparationBand::uniform(k, delta, None)
    }

    fn two_sided(&self, k: usize, delta: f64) -> Result<SeparationBand> {
        SeparationBand::uniform(k, delta, Some(delta + self.band_width))
    }
}

type Scores = Vec<(Criterion, f64)>;

/// Fit one method to one simulated sample. `Ok(None)` marks an infeasible
/// separated K-means.
fn evaluate(
    method: Method,
    sim: &SimulatedSample,
    truth: &GmmParams,
    config: &ExperimentConfig,
    delta: f64,
) -> Result<Option<Scores>> {
    let k = truth.k();
    match method {
        Method::Kmeans | Method::KmeansSep => {
            let stats = PrefixStats::new(&sim.sample);
            let solution = if method == Method::Kmeans {
                kmeans_1d(&stats, k)?
            } else {
                match kmeans_1d_sep(&stats, k, delta)? {
                    Some(s) => s,
                    None => return Ok(None),
                }
            };
            Ok(Some(vec![
                (Criterion::CenterError, center_error_total(solution.centers(), &truth.means)?),
                (Criterion::SizeError, size_error_total(solution.sizes(), &sim.sizes)?),
                (Criterion::RandIndex, rand_index(&solution.labels(), &sim.labels)?),
            ]))
        }
        Method::Em | Method::EmSepOneSided | Method::EmSepTwoSided => {
            let (init_band, fit_band) = match method {
                Method::Em => match config.em_init {
                    EmInit::Separated => (Some(config.one_sided(k, delta)?), None),
                    EmInit::Unconstrained => (None, None),
                },
                Method::EmSepOneSided => {
                    let b = config.one_sided(k, delta)?;
                    (Some(b.clone()), Some(b))
                }
                _ => {
                    let b = config.two_sided(k, delta)?;
                    (Some(b.clone()), Some(b))
                }
            };
            let init = init_from_kmeans(&sim.sample, k, init_band.as_ref())?;
            let em = EmConfig {
                gamma: config.gamma,
                max_iter: config.max_iter,
                band: fit_band,
                keep_history: false,
            };
            let fit = fit_from(sim.sample.values(), init.params, &em)?;
            let (est, _) = fit.params.sorted_by_mean();
            Ok(Some(vec![
                (Criterion::CenterErrorAvg, center_error_avg(&est.means, &truth.means)?),
                (Criterion::AllParamsError, all_params_error_avg(&est, truth)?),
                (Criterion::RandIndex, rand_index(&fit.labels, &sim.labels)?),
            ]))
        }
    }
}

/// What one method produced on one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub seed: u64,
    pub method: Method,
    /// `None` when the replicate failed for this method.
    pub scores: Option<Scores>,
    pub failure: Option<String>,
}

/// One line of a result table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub experiment: String,
    pub method: String,
    pub criterion: String,
    pub mean: f64,
    pub sd: f64,
    /// Replicates contributing to the row.
    #[serde(rename = "R")]
    pub r: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub records: Vec<ReplicateRecord>,
    pub summary: Vec<SummaryRow>,
}

impl ExperimentResult {
    /// Failed replicates per method.
    pub fn failures(&self) -> Vec<(Method, usize)> {
        self.config
            .methods
            .iter()
            .map(|&m| {
                let n = self
                    .records
                    .iter()
                    .filter(|r| r.method == m && r.scores.is_none())
                    .count();
                (m, n)
            })
            .collect()
    }

    pub fn row(&self, method: Method, criterion: Criterion) -> Option<&SummaryRow> {
        self.summary
            .iter()
            .find(|r| r.method == method.name() && r.criterion == criterion.name())
    }
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

/// Linear-interpolation quantile of unsorted data.
pub fn quantile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = p.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

fn scores_of(records: &[&ReplicateRecord], criterion: Criterion) -> Vec<f64> {
    records
        .iter()
        .filter_map(|r| r.scores.as_ref())
        .filter_map(|s| s.iter().find(|(c, _)| *c == criterion).map(|(_, v)| *v))
        .collect()
}

fn replicate_seed(base: u64, r: usize) -> u64 {
    base.wrapping_add(r as u64)
}

fn run_replicate(
    config: &ExperimentConfig,
    spec: &MixtureModelSpec,
    truth: &GmmParams,
    methods: &[Method],
    deltas: &[f64],
    r: usize,
) -> Result<Vec<Vec<ReplicateRecord>>> {
    let seed = replicate_seed(config.seed, r);
    let sim = sample_model(spec, config.n, seed)?;
    let mut regular: Option<ReplicateRecord> = None;
    let mut out = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let mut row = Vec::with_capacity(methods.len());
        for &method in methods {
            // Unconstrained fits do not depend on the separation.
            let reusable = method == Method::Kmeans || (method == Method::Em && config.em_init == EmInit::Unconstrained);
            if reusable {
                if let Some(rec) = regular.as_ref().filter(|rec| rec.method == method) {
                    row.push(rec.clone());
                    continue;
                }
            }
            let (scores, failure) = match evaluate(method, &sim, truth, config, delta) {
                Ok(Some(s)) => (Some(s), None),
                Ok(None) => (None, Some("infeasible".to_string())),
                Err(e) => (None, Some(e.to_string())),
            };
            let rec = ReplicateRecord {
                replicate: r,
                seed,
                method,
                scores,
                failure,
            };
            if reusable {
                regular = Some(rec.clone());
            }
            row.push(rec);
        }
        out.push(row);
    }
    Ok(out)
}

fn summarize(config: &ExperimentConfig, records: &[ReplicateRecord]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for &method in &config.methods {
        let mine: Vec<&ReplicateRecord> = records.iter().filter(|r| r.method == method).collect();
        for &criterion in method.criteria() {
            let values = scores_of(&mine, criterion);
            let (mean, sd) = mean_sd(&values);
            rows.push(SummaryRow {
                experiment: config.name.clone(),
                method: method.name().to_string(),
                criterion: criterion.name().to_string(),
                mean,
                sd,
                r: values.len(),
                seed: config.seed,
            });
        }
    }
    rows
}

/// Run every configured method on `replicates` seeded samples and aggregate.
///
/// Replicates run in parallel; results are collected and aggregated in
/// replicate order, so the output does not depend on the thread count.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let spec = config.model_spec()?;
    let truth = spec.truth()?;
    let per_replicate: Vec<Vec<Vec<ReplicateRecord>>> = (0..config.replicates)
        .into_par_iter()
        .map(|r| run_replicate(config, &spec, &truth, &config.methods, &[config.delta], r))
        .collect::<Result<_>>()?;
    let records: Vec<ReplicateRecord> = per_replicate.into_iter().flatten().flatten().collect();
    let summary = summarize(config, &records);
    Ok(ExperimentResult {
        config: config.clone(),
        records,
        summary,
    })
}

/// One point of a sweep curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub delta: f64,
    pub method: String,
    pub criterion: String,
    pub mean: f64,
    pub sd: f64,
    pub q05: f64,
    pub q95: f64,
    #[serde(rename = "R")]
    pub r: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub name: String,
    pub grid: Vec<f64>,
    pub points: Vec<CurvePoint>,
    /// Per grid point, the full result as `run_experiment` would report it.
    pub results: Vec<ExperimentResult>,
}

impl SweepResult {
    pub fn curve(&self, method: Method, criterion: Criterion) -> Vec<&CurvePoint> {
        self.points
            .iter()
            .filter(|p| p.method == method.name() && p.criterion == criterion.name())
            .collect()
    }
}

/// Run the configured EM methods at every separation in `grid`, reusing each
/// replicate's sample across grid points and methods.
pub fn sweep_delta(config: &ExperimentConfig, grid: &[f64]) -> Result<SweepResult> {
    config.validate()?;
    if grid.is_empty() {
        return Err(config_error("grid_start", "empty grid"));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) || grid.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
        return Err(config_error("grid_step", "grid must be increasing and nonnegative"));
    }
    let spec = config.model_spec()?;
    let truth = spec.truth()?;
    let per_replicate: Vec<Vec<Vec<ReplicateRecord>>> = (0..config.replicates)
        .into_par_iter()
        .map(|r| run_replicate(config, &spec, &truth, &config.methods, grid, r))
        .collect::<Result<_>>()?;

    let mut points = Vec::new();
    let mut results = Vec::with_capacity(grid.len());
    for (g, &delta) in grid.iter().enumerate() {
        let records: Vec<ReplicateRecord> = per_replicate.iter().flat_map(|rows| rows[g].clone()).collect();
        for &method in &config.methods {
            let mine: Vec<&ReplicateRecord> = records.iter().filter(|r| r.method == method).collect();
            for &criterion in method.criteria() {
                let values = scores_of(&mine, criterion);
                let (mean, sd) = mean_sd(&values);
                points.push(CurvePoint {
                    delta,
                    method: method.name().to_string(),
                    criterion: criterion.name().to_string(),
                    mean,
                    sd,
                    q05: quantile(&values, 0.05),
                    q95: quantile(&values, 0.95),
                    r: values.len(),
                });
            }
        }
        let at = ExperimentConfig {
            delta,
            ..config.clone()
        };
        let summary = summarize(&at, &records);
        results.push(ExperimentResult {
            config: at,
            records,
            summary,
        });
    }
    Ok(SweepResult {
        name: config.name.clone(),
        grid: grid.to_vec(),
        points,
        results,
    })
}

/// Read one value per row. With `header`, the first row is skipped.
pub fn load_csv(path: &Path, header: bool) -> Result<SortedSample> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(header)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let parse_error = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line: line as usize,
        message,
    };
    let mut values = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 1 {
            return Err(parse_error(line, format!("expected one value, found {} fields", record.len())));
        }
        let field = &record[0];
        let value: f64 = field
            .parse()
            .map_err(|_| parse_error(line, format!("not a number: `{field}`")))?;
        if !value.is_finite() {
            return Err(parse_error(line, format!("non-finite value `{field}`")));
        }
        values.push(value);
    }
    SortedSample::new(values)
}

pub fn write_results(rows: &[SummaryRow], path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_results(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    reader
        .deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

pub fn write_curves(points: &[CurvePoint], path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for p in points {
        writer.serialize(p)?;
    }
    writer.flush()?;
    Ok(())
}
