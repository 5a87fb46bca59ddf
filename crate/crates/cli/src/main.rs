//! `sepclust`: separation-constrained K-means and Gaussian mixture fitting.

mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Exit status for a problem with no feasible solution.
const EXIT_INFEASIBLE: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "sepclust", version, about = "Exact 1D K-means and Gaussian mixtures with bounds on the gaps between adjacent centers")]
struct Cli {
    /// Worker threads for experiments (default: all cores).
    #[arg(long, global = true, env = "SEPCLUST_THREADS")]
    threads: Option<usize>,

    /// Print JSON instead of CSV.
    #[arg(long, global = true)]
    json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Optimal K-means on the line, optionally with a minimum center gap.
    Kmeans(KmeansArgs),
    /// Fit a Gaussian mixture by EM, optionally with per-gap bounds on the means.
    Gmm(GmmArgs),
    /// Draw a sample from a built-in mixture model.
    Simulate(SimulateArgs),
    /// Run a replicated experiment from a config file.
    Experiment(ExperimentArgs),
    /// Sweep the separation over a grid from a config file.
    Sweep(ExperimentArgs),
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false, id = "source")]
struct DataSource {
    /// CSV file with one value per row.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Comma-separated values.
    #[arg(long, allow_hyphen_values = true, value_delimiter = ',')]
    inline: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
struct KmeansArgs {
    #[command(flatten)]
    source: DataSource,
    /// The input file starts with a header row.
    #[arg(long)]
    header: bool,
    /// Number of clusters.
    #[arg(long)]
    k: usize,
    /// Minimum gap between adjacent centers.
    #[arg(long)]
    delta: Option<f64>,
}

#[derive(Debug, Args)]
struct GmmArgs {
    /// CSV file with one value per row.
    #[arg(long, group = "gmm_source")]
    input: Option<PathBuf>,
    /// Comma-separated values.
    #[arg(long, allow_hyphen_values = true, value_delimiter = ',', group = "gmm_source")]
    inline: Option<Vec<f64>>,
    /// Simulate the data from a built-in model (A, B, C or D).
    #[arg(long, group = "gmm_source")]
    model: Option<String>,
    /// Sample size when simulating.
    #[arg(long, default_value_t = 500)]
    n: usize,
    /// Seed when simulating.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// The input file starts with a header row.
    #[arg(long)]
    header: bool,
    /// Number of components (default: the model's, or the config's).
    #[arg(long)]
    k: Option<usize>,
    /// Lower gap bounds: one value for every gap, or K-1 values.
    #[arg(long, allow_hyphen_values = true, value_delimiter = ',')]
    sep_lo: Option<Vec<f64>>,
    /// Upper gap bounds: one value for every gap, or K-1 values.
    #[arg(long, allow_hyphen_values = true, value_delimiter = ',')]
    sep_hi: Option<Vec<f64>>,
    /// Stop once no parameter changes by more than this.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// TOML file with any of k, sep_lo, sep_hi, gamma, max_iter. Flags win.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Built-in model: A, B, C or D.
    #[arg(long)]
    model: String,
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also print the generating component (1-based).
    #[arg(long)]
    labels: bool,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the replicate count.
    #[arg(long)]
    replicates: Option<usize>,
    /// Override the base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override where the results CSV is written.
    #[arg(long)]
    output: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::run(cli.command, cli.json) {
        Ok(commands::Status::Done) => ExitCode::SUCCESS,
        Ok(commands::Status::Infeasible) => {
            eprintln!("infeasible");
            ExitCode::from(EXIT_INFEASIBLE)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
