//! `adsim`: synthetic data, preprocessing, model fitting, validation,
//! policy evaluation and the interactive service.
//!
//! Exit codes: 0 success, 2 usage error, 3 missing input file, 4 malformed
//! input file, 5 any other failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "adsim",
    version,
    about = "Virtual-patient simulator for sequential Alzheimer's treatment decisions"
)]
struct Cli {
    /// Feature schema manifest (defaults to the built-in ADNI schema)
    #[arg(long, global = true, env = "ADSIM_SCHEMA")]
    schema: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort and the raw tables it implies
    SynthData(SynthArgs),
    /// Raw visit and medication tables to an imputed, split cohort and scaler
    Preprocess(PreprocessArgs),
    /// Train the mixture-of-experts dynamics model
    TrainDynamics(TrainDynamicsArgs),
    /// Fit BIC-selected start-state mixtures per cohort
    FitGmm(FitGmmArgs),
    /// Forecast a cohort with a dynamics model and run the fidelity tests
    Validate(ValidateArgs),
    /// Run one episode with a named policy and print its JSONL log
    Rollout(RolloutArgs),
    /// Compare policies over seeded episodes
    Evaluate(EvaluateArgs),
    /// Shapley attribution of a policy's decision for one action
    Attribute(AttributeArgs),
    /// Train a linear cross-entropy-method policy in the simulator
    TrainCem(TrainCemArgs),
    /// Behavior-clone the clinician policy from a cohort
    TrainBc(TrainBcArgs),
    /// Serve the session API
    Serve(ServeArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    /// Number of subjects
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Output directory for cohort.csv, visits.csv and medications.csv
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Probability that a continuous value is missing in the raw tables
    #[arg(long, default_value_t = 0.1)]
    pub missing_rate: f64,
    /// Regenerate every trajectory from its first visit with a linear memory
    /// engine; also writes engine.bin and scaler.bin
    #[arg(long)]
    pub linear_engine: bool,
    /// Engine memory drift per step (z units)
    #[arg(long, default_value_t = adsim_core::artifacts::DEMO_DRIFT, allow_negative_numbers = true)]
    pub drift: f64,
    /// Engine AD-treatment effect per step (z units)
    #[arg(long, default_value_t = adsim_core::artifacts::DEMO_EFFECT, allow_negative_numbers = true)]
    pub effect: f64,
    /// Engine noise SD per 6 months (z units)
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
}

#[derive(Args)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub visits: PathBuf,
    #[arg(long)]
    pub medications: PathBuf,
    /// Output directory for cohort.csv, split.csv, scaler.bin and summary.json
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub min_visits: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Args)]
pub struct TrainDynamicsArgs {
    /// Raw cohort CSV
    #[arg(long)]
    pub cohort: PathBuf,
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long)]
    pub scaler: PathBuf,
    /// Output model container
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub experts: usize,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Args)]
pub struct FitGmmArgs {
    #[arg(long)]
    pub cohort: PathBuf,
    #[arg(long)]
    pub scaler: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub k_min: usize,
    #[arg(long, default_value_t = 10)]
    pub k_max: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Args)]
pub struct ValidateArgs {
    /// Dynamics model container
    #[arg(long)]
    pub dynamics: PathBuf,
    /// Raw cohort CSV holding the observed trajectories
    #[arg(long)]
    pub cohort: PathBuf,
    #[arg(long)]
    pub scaler: PathBuf,
    /// Restrict to one partition of this split file
    #[arg(long, requires = "partition")]
    pub split: Option<PathBuf>,
    /// train, val or test
    #[arg(long, requires = "split")]
    pub partition: Option<String>,
    #[arg(long, default_value_t = 1000)]
    pub mmd_permutations: usize,
    #[arg(long, default_value_t = 5000)]
    pub mantel_permutations: usize,
    /// Skip the per-feature short-range tests
    #[arg(long)]
    pub no_per_feature: bool,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Also write the full report as JSON
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ArtifactArgs {
    /// Use the built-in synthetic bundle instead of artifact files
    #[arg(long)]
    pub demo: bool,
    #[arg(long, env = "ADSIM_SCALER", required_unless_present = "demo")]
    pub scaler: Option<PathBuf>,
    /// Start-state mixture container
    #[arg(long, env = "ADSIM_GMM", required_unless_present = "demo")]
    pub gmm: Option<PathBuf>,
    /// Dynamics container as PATH or NAME=PATH; repeatable
    #[arg(
        long = "dynamics",
        env = "ADSIM_DYNAMICS",
        value_delimiter = ',',
        required_unless_present = "demo"
    )]
    pub dynamics: Vec<String>,
    /// Behavior-cloned clinician container (adds policy clinician_bc)
    #[arg(long, env = "ADSIM_BC")]
    pub bc: Option<PathBuf>,
    /// CEM policy container (adds policy cem)
    #[arg(long, env = "ADSIM_CEM")]
    pub cem: Option<PathBuf>,
}

#[derive(Args)]
pub struct EpisodeArgs {
    /// Start-state cohort: all, healthy or impaired
    #[arg(long, default_value = "all")]
    pub cohort: String,
    /// Dynamics name (defaults to the first loaded)
    #[arg(long)]
    pub engine: Option<String>,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Args)]
pub struct RolloutArgs {
    #[command(flatten)]
    pub artifacts: ArtifactArgs,
    #[command(flatten)]
    pub episode: EpisodeArgs,
    #[arg(long, default_value = "heuristic")]
    pub policy: String,
    #[arg(long, default_value_t = 22)]
    pub max_steps: usize,
    /// jsonl: one step record per line; json: the whole episode including
    /// the initial observation
    #[arg(long, default_value = "jsonl", value_parser = ["jsonl", "json"])]
    pub format: String,
    /// Write the log here instead of stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub artifacts: ArtifactArgs,
    #[command(flatten)]
    pub episode: EpisodeArgs,
    /// Comma-separated policy names
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "no_medication,heuristic,always_treat"
    )]
    pub policies: Vec<String>,
    /// Number of patients
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// Write the summary table here (tab-separated)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the full report as JSON here
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Args)]
pub struct AttributeArgs {
    #[command(flatten)]
    pub artifacts: ArtifactArgs,
    #[command(flatten)]
    pub episode: EpisodeArgs,
    #[arg(long)]
    pub policy: String,
    /// Action name or index (defaults to AD treatment)
    #[arg(long)]
    pub action: Option<String>,
    /// Start states to explain
    #[arg(long, default_value_t = 50)]
    pub n_states: usize,
    /// Permutations per state
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct TrainCemArgs {
    #[command(flatten)]
    pub artifacts: ArtifactArgs,
    #[command(flatten)]
    pub episode: EpisodeArgs,
    #[arg(long, default_value_t = 64)]
    pub population: usize,
    #[arg(long, default_value_t = 0.1)]
    pub elite_fraction: f64,
    #[arg(long, default_value_t = 30)]
    pub iterations: usize,
    /// Episodes per candidate
    #[arg(long, default_value_t = 4)]
    pub rollouts: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TrainBcArgs {
    #[arg(long)]
    pub cohort: PathBuf,
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long)]
    pub scaler: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 128)]
    pub hidden: usize,
    #[arg(long, default_value_t = 50)]
    pub mc_samples: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub artifacts: ArtifactArgs,
    #[arg(long, env = "ADSIM_ADDR", default_value = "127.0.0.1:8080")]
    pub addr: String,
    /// Idle session lifetime in seconds
    #[arg(long, env = "ADSIM_SESSION_TTL", default_value_t = 7200)]
    pub ttl_secs: u64,
    /// Directory for per-session episode logs
    #[arg(long, env = "ADSIM_LOG_DIR")]
    pub log_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let schema = match commands::load_schema(cli.schema.as_deref()) {
        Ok(s) => s,
        Err(e) => return commands::fail(&e),
    };
    let out = match cli.command {
        Command::SynthData(a) => commands::synth_data(&schema, a),
        Command::Preprocess(a) => commands::preprocess(&schema, a),
        Command::TrainDynamics(a) => commands::train_dynamics(&schema, a),
        Command::FitGmm(a) => commands::fit_gmm(&schema, a),
        Command::Validate(a) => commands::validate(&schema, a),
        Command::Rollout(a) => commands::rollout(cli.schema.as_deref(), a),
        Command::Evaluate(a) => commands::evaluate(cli.schema.as_deref(), a),
        Command::Attribute(a) => commands::attribute(cli.schema.as_deref(), a),
        Command::TrainCem(a) => commands::train_cem(cli.schema.as_deref(), a),
        Command::TrainBc(a) => commands::train_bc(&schema, a),
        Command::Serve(a) => commands::serve(cli.schema.as_deref(), a),
    };
    match out {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => commands::fail(&e),
    }
}
