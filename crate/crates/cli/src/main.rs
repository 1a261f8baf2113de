use std::path::PathBuf;
use std::process::ExitCode;

use ascertain_core::simstudy::{ShiftTarget, Study};
use ascertain_core::{CaptureModel, Variant};
use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Parser, Debug)]
#[command(name = "ascertain", version, about = "Detect and correct differential ascertainment in multi-list case counts")]
struct Cli {
    /// Worker threads; 0 uses one per core. Output does not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a capture model to exposed and unexposed tables
    Fit(FitArgs),
    /// Bootstrap the null distribution of the shift and run the three-sided test
    Test(TestArgs),
    /// Select a log-linear model and estimate the unobserved cells
    Loglinear(LoglinearArgs),
    /// Run a simulation study
    Simulate(SimulateArgs),
    /// Cell probabilities at a shift estimate and at plus/minus a margin
    Probs(ProbsArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Fixture {
    Nvdrs,
    NvdrsCompleted,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    Bias,
    Estimators,
}

#[derive(Args, Debug)]
struct InputArgs {
    /// Record CSV (exposure,list1,...) or aggregated CSV (exposure,pattern,count)
    #[arg(long, required_unless_present = "fixture", conflicts_with = "fixture")]
    input: Option<PathBuf>,

    /// Use a bundled data set instead of --input
    #[arg(long, value_enum)]
    fixture: Option<Fixture>,

    /// Label of the exposed group in the input
    #[arg(long, default_value = "E")]
    exposed: String,

    /// Label of the unexposed group in the input
    #[arg(long, default_value = "U")]
    unexposed: String,

    /// List names in column order, comma separated
    #[arg(long, value_delimiter = ',')]
    lists: Option<Vec<String>>,
}

#[derive(Args, Debug)]
struct OutArgs {
    /// Write the report here instead of standard output
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    input: InputArgs,

    /// Likelihood variant; defaults to the free-shift model matching the tables
    #[arg(long, value_parser = parse_variant)]
    variant: Option<Variant>,

    #[arg(long, value_parser = parse_model, default_value = "dynamic")]
    model: CaptureModel,

    /// Seed for the jittered optimizer starts
    #[arg(long, default_value_t = 0)]
    seed: u64,

    #[arg(long, default_value_t = 5)]
    multistart: usize,

    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct TestArgs {
    #[command(flatten)]
    input: InputArgs,

    #[arg(long, value_parser = parse_model, default_value = "dynamic")]
    model: CaptureModel,

    /// Bootstrap replicates
    #[arg(long, default_value_t = ascertain_core::threesided::DEFAULT_REPLICATES)]
    bootstrap: usize,

    /// Level of each one-sided test
    #[arg(long, default_value_t = ascertain_core::threesided::DEFAULT_ALPHA)]
    alpha: f64,

    /// Equivalence margins to decide at, comma separated or repeated
    #[arg(long, value_delimiter = ',', default_value = "0")]
    delta: Vec<f64>,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Write the null draws here; defaults to <out>.draws.csv when --out is set
    #[arg(long)]
    draws: Option<PathBuf>,

    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct LoglinearArgs {
    #[command(flatten)]
    input: InputArgs,

    /// Smallest Pearson p-value a model may have
    #[arg(long, default_value_t = 0.05)]
    lower_p: f64,

    /// Leave the saturated model out of the candidates
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    exclude_saturated: bool,

    /// Write the completed tables here as aggregated CSV
    #[arg(long)]
    completed: Option<PathBuf>,

    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Study to run; defaults to the one named in the configuration
    #[arg(long, value_parser = parse_study)]
    study: Option<Study>,

    /// Bundled configuration
    #[arg(long, value_enum, required_unless_present = "config", conflicts_with = "config")]
    preset: Option<Preset>,

    /// TOML study configuration
    #[arg(long)]
    config: Option<PathBuf>,

    /// Which group the simulated shift applies to
    #[arg(long, value_parser = parse_target)]
    theta_applies_to: Option<ShiftTarget>,

    /// Override the number of replicates
    #[arg(long)]
    replicates: Option<usize>,

    /// Override the seed
    #[arg(long)]
    seed: Option<u64>,

    /// Write the result rows here as CSV
    #[arg(long)]
    csv: Option<PathBuf>,

    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct ProbsArgs {
    /// Take the parameters from a report written by `fit`
    #[arg(long, conflicts_with_all = ["strengths", "interactions", "theta"])]
    from_report: Option<PathBuf>,

    /// List strengths, comma separated
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required_unless_present = "from_report")]
    strengths: Option<Vec<f64>>,

    /// Two-list interactions in (1,2), (1,3), ..., (2,3), ... order
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    interactions: Option<Vec<f64>>,

    /// Shift estimate for the exposed group
    #[arg(long, allow_negative_numbers = true)]
    theta: Option<f64>,

    #[arg(long, value_parser = parse_model, default_value = "dynamic")]
    model: CaptureModel,

    /// Margin for the plus/minus columns
    #[arg(long, default_value_t = 0.0)]
    delta: f64,

    /// List names, comma separated
    #[arg(long, value_delimiter = ',')]
    lists: Option<Vec<String>>,

    #[command(flatten)]
    out: OutArgs,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: ascertain_core::Error| e.to_string())
}

fn parse_model(s: &str) -> Result<CaptureModel, String> {
    s.parse().map_err(|e: ascertain_core::Error| e.to_string())
}

fn parse_study(s: &str) -> Result<Study, String> {
    s.parse().map_err(|e: ascertain_core::Error| e.to_string())
}

fn parse_target(s: &str) -> Result<ShiftTarget, String> {
    s.parse().map_err(|e: ascertain_core::Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start {} worker threads: {e}", cli.threads);
            return ExitCode::from(2);
        }
    };
    match pool.install(|| commands::run(&cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(failure.exit_code())
        }
    }
}
