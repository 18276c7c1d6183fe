use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand};
use nl2kql::config::Limit;

#[derive(Debug, Parser)]
#[command(
    name = "nl2kql",
    version,
    about = "Translate natural-language requests into KQL queries",
    after_help = "Settings are read from built-in defaults, then environment variables, then the --config \
                  file, then command-line flags; later sources win.\n\nEnvironment: LLM_ENDPOINT, \
                  LLM_MODEL, LLM_API_KEY, LLM_TRANSCRIPT, EMBED_ENDPOINT, EMBED_MODEL, EMBED_API_KEY"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check or enrich a data catalog.
    #[command(subcommand)]
    Catalog(CatalogCommand),
    /// Build the embedding store.
    #[command(subcommand)]
    Embed(EmbedCommand),
    /// Generate few-shot examples with round-trip validation.
    Synth(SynthArgs),
    /// Translate one request.
    Translate(TranslateArgs),
    /// Translate requests read line by line from standard input.
    Repl(ReplArgs),
    /// Repair a query file and print the outcome as JSON.
    Repair(RepairArgs),
    /// Score the pipeline on a benchmark.
    Eval(EvalArgs),
}

#[derive(Debug, Subcommand)]
pub enum CatalogCommand {
    /// Load a catalog and report its size.
    Validate {
        #[command(flatten)]
        common: Common,
    },
    /// Add Enum values inferred from sample data and, optionally, extended
    /// table summaries written by the model.
    Enrich {
        #[command(flatten)]
        common: Common,
        /// Directory of `.tbl` sample tables.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Ask the model for an extended summary of every table.
        #[arg(long)]
        summarize: bool,
        /// Where to write the enriched catalog.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum EmbedCommand {
    /// Embed every table, column, Enum value and few-shot request.
    Build {
        #[command(flatten)]
        common: Common,
        /// Where to write the store.
        #[arg(long)]
        out: PathBuf,
    },
}

/// Inputs and settings shared by every subcommand.
#[derive(Debug, Args)]
pub struct Common {
    /// TOML settings file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Data catalog (JSON).
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    /// Embedding store; built in memory when absent.
    #[arg(long)]
    pub store: Option<PathBuf>,
    /// Few-shot database (JSONL).
    #[arg(long)]
    pub fsdb: Option<PathBuf>,
    /// Scripted completions (JSONL) for `--llm scripted`.
    #[arg(long)]
    pub transcript: Option<PathBuf>,
    #[command(flatten)]
    pub tuning: Tuning,
}

/// Overrides for the run configuration. A flag only takes effect when
/// given on the command line.
#[derive(Debug, Args)]
pub struct Tuning {
    /// Maximum number of tables in the prompt, or `all`.
    #[arg(long, default_value = "9")]
    pub t: Limit,
    /// Maximum number of values per Enum column.
    #[arg(long = "v-n", default_value_t = 5)]
    pub v_n: usize,
    /// Number of few-shot examples; 0 disables them.
    #[arg(long, default_value_t = 2)]
    pub f: usize,
    /// How few-shots are chosen.
    #[arg(long, default_value = "similar", value_parser = ["similar", "all"])]
    pub shot_mode: String,
    /// Run the query repairer on model output.
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    pub repair: bool,
    /// Maximum repair rounds.
    #[arg(long, default_value_t = 3)]
    pub max_iterations: usize,
    /// Minimum token Jaccard for a synthesized pair.
    #[arg(long, default_value_t = 0.7)]
    pub jaccard_threshold: f64,
    /// Minimum cosine similarity for identifier substitution.
    #[arg(long, default_value_t = 0.9)]
    pub substitution_threshold: f64,
    /// Benchmark repetitions.
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    /// Most distinct values for a column to be treated as Enum.
    #[arg(long, default_value_t = 20)]
    pub enum_threshold: usize,
    /// Warn when a prompt is estimated above this many tokens.
    #[arg(long, default_value_t = 24000)]
    pub token_warn_limit: usize,
    /// Embedding provider.
    #[arg(long, default_value = "deterministic", value_parser = ["deterministic", "http"])]
    pub embedder: String,
    /// Chat-completion provider.
    #[arg(long, default_value = "scripted", value_parser = ["scripted", "http"])]
    pub llm: String,
}

/// Names of the [`Tuning`] arguments, matching the config keys.
pub const TUNING_IDS: &[&str] = &[
    "t",
    "v_n",
    "f",
    "shot_mode",
    "repair",
    "max_iterations",
    "jaccard_threshold",
    "substitution_threshold",
    "repeats",
    "enum_threshold",
    "token_warn_limit",
    "embedder",
    "llm",
];

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    /// Number of candidates to generate.
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    /// Seed for table and theme sampling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Few-shot file to append accepted examples to.
    #[arg(long)]
    pub out: PathBuf,
    /// Where to write the JSON run report.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Scope {
    /// Comma-separated tables the user may query; every catalog table by
    /// default.
    #[arg(long, value_delimiter = ',')]
    pub accessible: Vec<String>,
}

#[derive(Debug, Args)]
pub struct TranslateArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub scope: Scope,
    /// The natural-language request.
    #[arg(long)]
    pub nlq: String,
    /// Write the rendered prompt to this file (`-` for standard error).
    #[arg(long)]
    pub dump_prompt: Option<PathBuf>,
    /// Print the whole translation result as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ReplArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub scope: Scope,
}

#[derive(Debug, Args)]
pub struct RepairArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub scope: Scope,
    /// File holding the query (`-` for standard input).
    pub file: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// Benchmark file: one `{"nlq", "kql", "database"}` record per line.
    #[arg(long)]
    pub benchmark: PathBuf,
    /// Directory of `.tbl` tables to execute queries on.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Where to write the JSON report.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads for scoring samples.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}
