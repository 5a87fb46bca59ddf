use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use sepclust::experiments::{
    load_csv, run_experiment, sample_model, sweep_delta, write_curves, write_results, Criterion, ExperimentConfig,
    MixtureModelSpec, SummaryRow,
};
use sepclust::{fit, kmeans_1d, kmeans_1d_sep, EmConfig, PrefixStats, SeparationBand, SortedSample};
use serde::Deserialize;

use crate::report::Report;
use crate::{Command, DataSource, ExperimentArgs, GmmArgs, KmeansArgs, SimulateArgs};

pub enum Status {
    Done,
    Infeasible,
}

pub fn run(command: Command, json: bool) -> Result<Status> {
    match command {
        Command::Kmeans(args) => kmeans(args, json),
        Command::Gmm(args) => gmm(args, json),
        Command::Simulate(args) => simulate(args, json),
        Command::Experiment(args) => experiment(args, json),
        Command::Sweep(args) => sweep(args, json),
    }
}

fn read_sample(input: Option<&Path>, inline: Option<&[f64]>, header: bool) -> Result<SortedSample> {
    match (input, inline) {
        (Some(path), _) => load_csv(path, header).with_context(|| format!("reading {}", path.display())),
        (None, Some(values)) => Ok(SortedSample::new(values.to_vec())?),
        (None, None) => bail!("no input data"),
    }
}

fn one_based(labels: Vec<usize>) -> Vec<usize> {
    labels.into_iter().map(|l| l + 1).collect()
}

fn kmeans(args: KmeansArgs, json: bool) -> Result<Status> {
    let DataSource { input, inline } = &args.source;
    let sample = read_sample(input.as_deref(), inline.as_deref(), args.header)?;
    let stats = PrefixStats::new(&sample);
    let solution = match args.delta {
        Some(delta) if delta != 0.0 => kmeans_1d_sep(&stats, args.k, delta)?,
        _ => Some(kmeans_1d(&stats, args.k)?),
    };
    let Some(solution) = solution else {
        Report::default().flag("feasible", false).print(json);
        return Ok(Status::Infeasible);
    };
    Report::default()
        .counts("labels", &one_based(solution.labels_in_input_order(&sample)))
        .floats("centers", solution.centers())
        .counts("sizes", solution.sizes())
        .float("objective", solution.objective())
        .flag("feasible", true)
        .print(json);
    Ok(Status::Done)
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

impl OneOrMany {
    fn into_vec(self) -> Vec<f64> {
        match self {
            OneOrMany::One(v) => vec![v],
            OneOrMany::Many(v) => v,
        }
    }
}

/// Settings `gmm` reads from `--config`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct GmmFile {
    k: Option<usize>,
    sep_lo: Option<OneOrMany>,
    sep_hi: Option<OneOrMany>,
    gamma: Option<f64>,
    max_iter: Option<usize>,
}

fn gmm(args: GmmArgs, json: bool) -> Result<Status> {
    let file: GmmFile = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => GmmFile::default(),
    };
    let (sample, model_k) = match &args.model {
        Some(name) => {
            let spec = MixtureModelSpec::named(name)?;
            (sample_model(&spec, args.n, args.seed)?.sample, Some(spec.k()))
        }
        None => (read_sample(args.input.as_deref(), args.inline.as_deref(), args.header)?, None),
    };
    let Some(k) = args.k.or(file.k).or(model_k) else {
        bail!("--k is required");
    };
    let lo = args.sep_lo.or(file.sep_lo.map(OneOrMany::into_vec));
    let hi = args.sep_hi.or(file.sep_hi.map(OneOrMany::into_vec));
    let band = match (lo, hi) {
        (None, None) => None,
        // An upper bound alone keeps the components ordered.
        (lo, hi) => Some(
            SeparationBand::from_lists(k, lo.as_deref().unwrap_or(&[0.0]), hi.as_deref())
                .context("invalid separation band")?,
        ),
    };
    let defaults = EmConfig::default();
    let config = EmConfig {
        gamma: args.gamma.or(file.gamma).unwrap_or(defaults.gamma),
        max_iter: args.max_iter.or(file.max_iter).unwrap_or(defaults.max_iter),
        band,
        keep_history: false,
    };
    let result = fit(&sample, k, &config)?;
    let init = result.init.as_ref().expect("fit records its initialization");
    let final_loglik = *result.loglik_trace.last().expect("trace is never empty");
    Report::default()
        .floats("weights", &result.params.weights)
        .floats("means", &result.params.means)
        .floats("variances", &result.params.variances)
        .float("loglik", final_loglik)
        .count("iterations", result.iterations)
        .flag("converged", result.converged)
        .text("init", if init.separated { "separated" } else { "plain" })
        .flag("init_fallback", init.fallback)
        .flag("init_projected", init.projected)
        .counts("labels", &one_based(sample.to_input_order(&result.labels)))
        .floats("loglik_trace", &result.loglik_trace)
        .print(json);
    Ok(Status::Done)
}

fn simulate(args: SimulateArgs, json: bool) -> Result<Status> {
    let spec = MixtureModelSpec::named(&args.model)?;
    let sim = sample_model(&spec, args.n, args.seed)?;
    let labels = one_based(sim.labels);
    if json {
        let mut out = serde_json::json!({ "values": sim.sample.values() });
        if args.labels {
            out["components"] = serde_json::json!(labels);
        }
        println!("{out}");
    } else {
        for (i, v) in sim.sample.values().iter().enumerate() {
            if args.labels {
                println!("{v},{}", labels[i]);
            } else {
                println!("{v}");
            }
        }
    }
    Ok(Status::Done)
}

fn load_config(args: &ExperimentArgs) -> Result<ExperimentConfig> {
    let mut config =
        ExperimentConfig::load(&args.config).with_context(|| format!("loading {}", args.config.display()))?;
    if let Some(r) = args.replicates {
        config.replicates = r;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn prepare(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn print_summary(rows: &[SummaryRow]) {
    println!("{:<10} {:<18} {:<18} {:>10} {:>10} {:>5}", "experiment", "method", "criterion", "mean", "sd", "R");
    for r in rows {
        println!(
            "{:<10} {:<18} {:<18} {:>10.4} {:>10.4} {:>5}",
            r.experiment, r.method, r.criterion, r.mean, r.sd, r.r
        );
    }
}

fn experiment(args: ExperimentArgs, json: bool) -> Result<Status> {
    let config = load_config(&args)?;
    let result = run_experiment(&config)?;
    let output: Option<PathBuf> = args.output.or(config.output.clone());
    if let Some(path) = &output {
        prepare(path)?;
        write_results(&result.summary, path).with_context(|| format!("writing {}", path.display()))?;
    }
    if json {
        println!("{}", serde_json::to_string(&result.summary)?);
    } else {
        print_summary(&result.summary);
        for (method, failed) in result.failures() {
            if failed > 0 {
                println!("{method}: {failed} failed replicates excluded");
            }
        }
    }
    Ok(Status::Done)
}

fn sweep(args: ExperimentArgs, json: bool) -> Result<Status> {
    let config = load_config(&args)?;
    let grid = config.grid()?;
    let result = sweep_delta(&config, &grid)?;
    let output: Option<PathBuf> = args.output.or(config.curves_output.clone());
    if let Some(path) = &output {
        prepare(path)?;
        write_curves(&result.points, path).with_context(|| format!("writing {}", path.display()))?;
    }
    if json {
        println!("{}", serde_json::to_string(&result.points)?);
        return Ok(Status::Done);
    }
    let criterion = Criterion::CenterErrorAvg.name();
    print!("{:>6}", "delta");
    for m in &config.methods {
        print!(" {:>18}", m.name());
    }
    println!();
    for &delta in &grid {
        print!("{delta:>6.2}");
        for m in &config.methods {
            let p = result
                .points
                .iter()
                .find(|p| p.delta == delta && p.method == m.name() && p.criterion == criterion);
            print!(" {:>18.4}", p.map_or(f64::NAN, |p| p.mean));
        }
        println!();
    }
    Ok(Status::Done)
}
