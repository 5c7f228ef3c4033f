use std::net::SocketAddr;
use std::path::PathBuf;

use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};

use logtrack_core::eval::Method;
use logtrack_core::simulator::VariantSpec;

/// Detect changes behind LLM APIs from first-token logprobs.
///
/// Exit codes: 0 success or no change, 1 usage error, 2 runtime error,
/// 3 significant test result or change event found.
#[derive(Debug, Parser)]
#[command(name = "logtrack", version)]
pub struct Cli {
    /// More logging on stderr; also prints every resolved parameter.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Send one logprob probe to an endpoint.
    Probe(ProbeArgs),
    /// Two-phase logprob-support survey of a fleet.
    Survey(SurveyArgs),
    /// Poll a fleet on a schedule into a store.
    Poll(PollArgs),
    /// Two-sample logprob-tracking test on recorded or live samples.
    Test(TestArgs),
    /// Offline change-point scan of a recorded series.
    Scan(ScanArgs),
    /// Simulated endpoints and series.
    #[command(subcommand)]
    Simulate(SimulateCommand),
    /// ROC benchmark over a difficulty ladder.
    Bench(BenchArgs),
    /// Prompt ablation.
    Ablate(AblateArgs),
    /// Human-readable summary of a benchmark, survey or store.
    Report(ReportArgs),
    /// Dump a store as one JSONL stream.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct EndpointArgs {
    /// Fleet file; selects `--endpoint` from it.
    #[arg(long, requires = "endpoint", conflicts_with = "base_url")]
    pub fleet: Option<PathBuf>,
    /// Endpoint id within the fleet.
    #[arg(long)]
    pub endpoint: Option<String>,
    /// API root, e.g. https://api.example.com/v1
    #[arg(long, requires = "model")]
    pub base_url: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long, default_value = "cli")]
    pub id: String,
    /// Environment variable with the bearer token.
    #[arg(long)]
    pub auth_env: Option<String>,
    #[arg(long, default_value = "x")]
    pub prompt: String,
    #[arg(long, default_value_t = 20)]
    pub top_logprobs: usize,
    #[arg(long, default_value_t = 1)]
    pub max_tokens: u32,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    /// Per-request timeout in seconds.
    #[arg(long, default_value_t = 30.0)]
    pub timeout: f64,
    #[arg(long, default_value_t = 3)]
    pub max_attempts: u32,
    /// Waits between attempts in seconds, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1,4,16")]
    pub backoff: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[command(flatten)]
    pub endpoint: EndpointArgs,
    /// Also append a successful probe to this store.
    #[arg(long)]
    pub store: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SurveyArgs {
    #[arg(long)]
    pub fleet: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub parallelism: usize,
}

#[derive(Debug, Args)]
pub struct DetectorArgs {
    /// Samples per comparison window.
    #[arg(long, default_value_t = 24)]
    pub window: usize,
    /// Past statistics in the running mean and std.
    #[arg(long, default_value_t = 100)]
    pub stats_window: usize,
    #[arg(long, default_value_t = 12.0)]
    pub k_sigma: f64,
    /// Absolute floor the statistic must exceed.
    #[arg(long, default_value_t = 1.0)]
    pub floor: f64,
    /// Positions suppressed after an event [default: 2 * window]
    #[arg(long)]
    pub cooldown: Option<usize>,
    /// Statistics between the running window and the current one [default: window]
    #[arg(long)]
    pub baseline_gap: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PollArgs {
    #[arg(long)]
    pub fleet: PathBuf,
    #[arg(long)]
    pub store: PathBuf,
    /// Seconds between ticks.
    #[arg(long, default_value_t = 3600.0)]
    pub interval: f64,
    /// Stop after this many ticks instead of running until interrupted.
    #[arg(long)]
    pub ticks: Option<u64>,
    #[arg(long, default_value_t = 16)]
    pub parallelism: usize,
    /// Maximum tick delay as a fraction of the interval (at most 0.05).
    #[arg(long, default_value_t = 0.05)]
    pub jitter: f64,
    /// Seeds the jitter.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run the online detector on every series.
    #[arg(long)]
    pub detect: bool,
    #[command(flatten)]
    pub detector: DetectorArgs,
    /// POST change events here as JSON.
    #[arg(long, requires = "detect")]
    pub webhook: Option<String>,
}

#[derive(Debug, Args)]
pub struct TestArgs {
    /// Recorded samples (JSONL records) for group A.
    #[arg(long, requires = "b", conflicts_with = "fleet")]
    pub a: Option<PathBuf>,
    #[arg(long)]
    pub b: Option<PathBuf>,
    /// Fleet file for a live test between two endpoints.
    #[arg(long, requires_all = ["endpoint_a", "endpoint_b"])]
    pub fleet: Option<PathBuf>,
    #[arg(long)]
    pub endpoint_a: Option<String>,
    #[arg(long)]
    pub endpoint_b: Option<String>,
    /// Probes per endpoint in a live test.
    #[arg(long, default_value_t = 10)]
    pub samples: usize,
    #[arg(long, default_value_t = 1000)]
    pub permutations: usize,
    /// Enumerate every split instead of sampling.
    #[arg(long, conflicts_with = "fleet")]
    pub exact: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Key tokens by text, ignoring byte sequences.
    #[arg(long)]
    pub text_only: bool,
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    /// Recorded series (JSONL records).
    #[arg(long, conflicts_with = "store", required_unless_present = "store")]
    pub input: Option<PathBuf>,
    #[arg(long, requires = "endpoint")]
    pub store: Option<PathBuf>,
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long, default_value = "x")]
    pub prompt: String,
    #[command(flatten)]
    pub detector: DetectorArgs,
    #[arg(long)]
    pub text_only: bool,
}

#[derive(Debug, Args)]
pub struct SimArgs {
    /// Simulator config file (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<usize>,
    /// Per-request logit noise.
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Variant as kind:magnitude, e.g. logit-shift:0.125
    #[arg(long)]
    pub variant: Option<VariantSpec>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BehaviorArg {
    Normal,
    NoLogprobs,
    RateLimit,
    MinMaxTokens,
    ServerError,
}

#[derive(Debug, Subcommand)]
pub enum SimulateCommand {
    /// Serve a chat-completions endpoint until interrupted.
    Serve {
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long, default_value = "127.0.0.1:8000")]
        bind: SocketAddr,
        #[arg(long, value_enum, default_value = "normal")]
        behavior: BehaviorArg,
        /// Retry-After seconds for rate-limit.
        #[arg(long, default_value_t = 1)]
        retry_after: u64,
        /// Minimum max_tokens for min-max-tokens.
        #[arg(long, default_value_t = 16)]
        min_max_tokens: u32,
        /// Reported prompt tokens per request, cycled.
        #[arg(long, value_delimiter = ',', default_value = "1")]
        usage_pattern: Vec<u64>,
    },
    /// Write a synthetic series as JSONL records.
    Series {
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long, default_value_t = 1000)]
        len: usize,
        /// Change as index:kind:magnitude; repeatable, cumulative.
        #[arg(long = "change")]
        changes: Vec<String>,
        #[arg(long, default_value = "2024-01-01T00:00:00Z")]
        start: DateTime<Utc>,
        /// Seconds between points.
        #[arg(long, default_value_t = 3600)]
        step: i64,
        #[arg(long, default_value = "sim")]
        endpoint_id: String,
        /// Seeds the per-point draws.
        #[arg(long, default_value_t = 0)]
        stream: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Format {
    Jsonl,
    Csv,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Experiment plan (TOML); defaults apply without one.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<Method>>,
    /// Magnitudes, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub ladder: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value = "jsonl")]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Ablation plan (TOML) listing at least two prompts.
    #[arg(long)]
    pub plan: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct ReportArgs {
    /// Benchmark output (JSONL).
    #[arg(long)]
    pub bench: Option<PathBuf>,
    /// Survey output (JSON).
    #[arg(long)]
    pub survey: Option<PathBuf>,
    #[arg(long)]
    pub store: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Inclusive start (RFC 3339).
    #[arg(long)]
    pub from: Option<DateTime<Utc>>,
    /// Exclusive end (RFC 3339).
    #[arg(long)]
    pub to: Option<DateTime<Utc>>,
}
