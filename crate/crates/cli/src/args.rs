use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "eicl", version, about = "Emotion in-context learning experiments and prototype probing")]
pub struct Cli {
    /// TOML configuration; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random choice; defaults to the config file's, then 0.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Write outputs to exactly this directory.
    #[arg(long, global = true)]
    pub run_dir: Option<PathBuf>,
    /// Parent of generated `run-<timestamp>-<hash>` directories.
    #[arg(long, global = true)]
    pub runs_root: Option<PathBuf>,
    /// More log output; repeat for debug and trace.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    /// Errors only.
    #[arg(short, long, global = true, conflicts_with = "verbose")]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a corpus file and print a summary.
    Ingest(IngestArgs),
    /// Restrict a corpus to the labels an auxiliary model knows.
    Align(AlignArgs),
    /// Nearest training examples for each test record.
    Retrieve(RetrieveArgs),
    /// One experiment over the test split.
    Run(RunArgs),
    /// Methods, ablations and parameter sweeps in one go.
    Ablate(AblateArgs),
    /// Positive/negative prompt pairs for hidden-state extraction.
    ProbePairs(ProbePairsArgs),
    /// Category prototypes, similarity heatmap and rank-probability curve.
    ProbeAnalyze(ProbeAnalyzeArgs),
    /// Synthetic hidden-state traces, or with --bench a synthetic benchmark.
    Synth(SynthArgs),
    /// Summarize and verify saved run reports.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Zshot,
    Icl,
    Eicl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FieldArg {
    Emotion,
    Semantic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProviderArg {
    Http,
    Replay,
    PrototypeSim,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WeightRuleArg {
    Normalized,
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrictnessArg {
    Lenient,
    Strict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScaleArg {
    Affine,
    Minmax,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "train")]
    pub split: SplitArg,
    /// Expected label set, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub labels: Vec<String>,
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "train")]
    pub split: SplitArg,
    /// Labels of the auxiliary model, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub aux_labels: Vec<String>,
    /// Rename an auxiliary label, e.g. `anger=angry`. Repeatable.
    #[arg(long = "alias")]
    pub aliases: Vec<String>,
    /// Keep probabilities as they are instead of rescaling over shared labels.
    #[arg(long)]
    pub no_renormalize: bool,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub k1: Option<usize>,
    #[arg(long, value_enum, default_value = "emotion")]
    pub field: FieldArg,
}

#[derive(Debug, Args, Default)]
pub struct ProviderArgs {
    #[arg(long, value_enum)]
    pub provider: Option<ProviderArg>,
    /// Replay transcript.
    #[arg(long)]
    pub transcript: Option<PathBuf>,
    /// Prototype bank tensor for the simulated provider.
    #[arg(long)]
    pub bank: Option<PathBuf>,
    /// Text-to-vector lexicon tensor for the simulated provider.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    /// Environment variable holding the API key.
    #[arg(long)]
    pub api_key_env: Option<String>,
    #[arg(long)]
    pub max_concurrency: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub k1: Option<usize>,
    #[arg(long)]
    pub k2: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, value_enum)]
    pub weight_rule: Option<WeightRuleArg>,
    #[arg(long, value_enum)]
    pub strictness: Option<StrictnessArg>,
    /// Directory with zshot.txt, icl.txt and eicl.txt overrides.
    #[arg(long)]
    pub templates: Option<PathBuf>,
    #[command(flatten)]
    pub provider: ProviderArgs,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub k3: Option<usize>,
    #[arg(long)]
    pub no_eer: bool,
    #[arg(long)]
    pub no_dsl: bool,
    #[arg(long)]
    pub no_te: bool,
    #[command(flatten)]
    pub exp: ExperimentArgs,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub k3: Option<usize>,
    /// Variants to run: eicl, no_eer, no_dsl, no_te, icl, zshot.
    #[arg(long, value_delimiter = ',')]
    pub variants: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    pub k1_values: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub k2_values: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub k3_values: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub alpha_values: Vec<f64>,
    #[command(flatten)]
    pub exp: ExperimentArgs,
}

#[derive(Debug, Args)]
pub struct ProbePairsArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "train")]
    pub split: SplitArg,
    /// Labels to build pairs for; all labels when omitted.
    #[arg(long, value_delimiter = ',')]
    pub labels: Vec<String>,
    /// Samples per label.
    #[arg(long, default_value_t = 50)]
    pub per_label: usize,
}

#[derive(Debug, Args)]
pub struct ProbeAnalyzeArgs {
    /// Directory holding pairs.jsonl, traces/, and optionally queries.evec
    /// and decisions.jsonl.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// Directory of `<pair_id>.evec` traces.
    #[arg(long)]
    pub traces: Option<PathBuf>,
    /// `[N, L, d]` query hidden states, rows named by query id.
    #[arg(long)]
    pub queries: Option<PathBuf>,
    /// JSONL of `{id, probabilities}` decisions for the queries.
    #[arg(long)]
    pub decisions: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "affine")]
    pub scale: ScaleArg,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Write a synthetic classification benchmark instead of traces.
    #[arg(long)]
    pub bench: bool,
    #[arg(long, default_value_t = 10, conflicts_with = "bench")]
    pub labels: usize,
    #[arg(long, default_value_t = 4, conflicts_with = "bench")]
    pub layers: usize,
    #[arg(long, default_value_t = 64, conflicts_with = "bench")]
    pub dim: usize,
    #[arg(long, default_value_t = 50, conflicts_with = "bench")]
    pub per_label: usize,
    #[arg(long, default_value_t = 0.1, conflicts_with = "bench")]
    pub sigma: f64,
    #[arg(long, default_value_t = 500, conflicts_with = "bench")]
    pub queries: usize,
    /// Noise on query states; defaults to --sigma.
    #[arg(long, conflicts_with = "bench")]
    pub query_sigma: Option<f64>,
    /// Softmax temperature of the simulated decisions.
    #[arg(long, default_value_t = 0.1, conflicts_with = "bench")]
    pub temperature: f64,
    #[arg(long, requires = "bench")]
    pub train_per_label: Option<usize>,
    #[arg(long, requires = "bench")]
    pub test_per_label: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
    /// Also print per-label precision, recall and F1.
    #[arg(long)]
    pub per_label: bool,
}
