//! `dritc`: batch front end for the estimators, bootstrap, feasibility check,
//! true-estimand computation and simulation studies.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dritc_core::data::Estimand;
use dritc_core::inference::{CiKind, Strata};
use dritc_core::simlab::Scenario;
use dritc_core::Link;

#[derive(Debug, Parser)]
#[command(name = "dritc", version, about = "Treatment effects in external-control populations for single-arm trials")]
struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true, env = "DRITC_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Point estimates for one or more methods.
    Estimate(EstimateArgs),
    /// Bootstrap standard errors and confidence intervals.
    Bootstrap(BootstrapArgs),
    /// Replicated simulation study in one scenario.
    Simulate(SimulateArgs),
    /// Monte Carlo true ATC of a scenario.
    Truth(TruthArgs),
    /// Whether the target moments lie in the convex hull of the trial rows.
    CheckFeasibility(FeasibilityArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EstimandArg {
    Atc,
    Att,
}

impl From<EstimandArg> for Estimand {
    fn from(e: EstimandArg) -> Self {
        match e {
            EstimandArg::Atc => Estimand::Atc,
            EstimandArg::Att => Estimand::Att,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LinkArg {
    Logit,
    Cauchit,
}

impl From<LinkArg> for Link {
    fn from(l: LinkArg) -> Self {
        match l {
            LinkArg::Logit => Link::Logit,
            LinkArg::Cauchit => Link::Cauchit,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CiArg {
    Wald,
    Percentile,
}

impl From<CiArg> for CiKind {
    fn from(c: CiArg) -> Self {
        match c {
            CiArg::Wald => CiKind::Wald,
            CiArg::Percentile => CiKind::Percentile,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StrataArg {
    #[value(name = "by_source")]
    BySource,
    #[value(name = "sat_only")]
    SatOnly,
}

impl From<StrataArg> for Strata {
    fn from(s: StrataArg) -> Self {
        match s {
            StrataArg::BySource => Strata::BySource,
            StrataArg::SatOnly => Strata::SatOnly,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScenarioArg {
    #[value(name = "KS1", alias = "ks1")]
    Ks1,
    #[value(name = "KS2", alias = "ks2")]
    Ks2,
    #[value(name = "KS3", alias = "ks3")]
    Ks3,
    #[value(name = "KS4", alias = "ks4")]
    Ks4,
}

impl From<ScenarioArg> for Scenario {
    fn from(s: ScenarioArg) -> Self {
        match s {
            ScenarioArg::Ks1 => Scenario::Ks1,
            ScenarioArg::Ks2 => Scenario::Ks2,
            ScenarioArg::Ks3 => Scenario::Ks3,
            ScenarioArg::Ks4 => Scenario::Ks4,
        }
    }
}

#[derive(Debug, Clone, Args)]
struct OutputArgs {
    /// Write the JSON artifact here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
struct InputArgs {
    /// Delimited individual-level data with a header row.
    #[arg(long)]
    data: PathBuf,
    /// JSON sidecar mapping columns to roles.
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated method ids, e.g. `maic,dr_maic_cauchit`. Outcome-model
    /// methods without a link suffix use `--link`, or both links if unset.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long, value_enum, default_value = "atc")]
    estimand: EstimandArg,
    /// Restrict outcome models to one link.
    #[arg(long, value_enum)]
    link: Option<LinkArg>,
    /// Published control summaries; switches to aggregate-data mode.
    #[arg(long)]
    ad_target: Option<PathBuf>,
    /// Confidence level.
    #[arg(long, default_value_t = 0.95)]
    level: f64,
}

#[derive(Debug, Clone, Args)]
struct EstimateArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
struct BootstrapArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Number of resamples.
    #[arg(long = "B", default_value_t = 1000)]
    b: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "wald")]
    ci: CiArg,
    /// Resampling strata; aggregate-data mode always resamples trial rows only.
    #[arg(long, value_enum, default_value = "by_source")]
    strata: StrataArg,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    scenario: ScenarioArg,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    /// Bootstrap resamples per replication; 0 skips intervals.
    #[arg(long = "B", default_value_t = 200)]
    b: usize,
    #[arg(long)]
    seed: u64,
    /// Draws for the true estimand.
    #[arg(long, default_value_t = 10_000_000)]
    draws: usize,
    /// Use this true value instead of computing it.
    #[arg(long, allow_negative_numbers = true)]
    truth: Option<f64>,
    /// Directory for cached true estimands.
    #[arg(long)]
    truth_cache: Option<PathBuf>,
    /// Zero both treatment terms of the outcome model.
    #[arg(long)]
    null_effect: bool,
    /// Comma-separated method ids (default: all 16).
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
struct TruthArgs {
    #[arg(long, value_enum)]
    scenario: ScenarioArg,
    #[arg(long, default_value_t = 10_000_000)]
    draws: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    null_effect: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
struct FeasibilityArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    ad_target: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// How a run failed; decides the exit code.
#[derive(Debug)]
enum Failure {
    /// Bad arguments or unreadable / malformed input.
    Usage(anyhow::Error),
    /// A computation failed in the named stage.
    Stage(&'static str, anyhow::Error),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(e) = configure_threads(cli.threads) {
        eprintln!("error: {e:#}");
        return ExitCode::from(1);
    }
    let result = match &cli.command {
        Command::Estimate(a) => commands::estimate(a),
        Command::Bootstrap(a) => commands::bootstrap(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Truth(a) => commands::truth(a),
        Command::CheckFeasibility(a) => commands::check_feasibility(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Stage(stage, e)) => {
            eprintln!("error in stage `{stage}`: {e:#}");
            ExitCode::from(2)
        }
    }
}

#[cfg(feature = "parallel")]
fn configure_threads(threads: Option<usize>) -> anyhow::Result<()> {
    if let Some(n) = threads {
        anyhow::ensure!(n >= 1, "--threads must be at least 1");
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

#[cfg(not(feature = "parallel"))]
fn configure_threads(threads: Option<usize>) -> anyhow::Result<()> {
    anyhow::ensure!(threads != Some(0), "--threads must be at least 1");
    Ok(())
}
