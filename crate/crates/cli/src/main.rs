//! `prodintent`: the pipeline from synthetic data to a serving model.
//!
//! Exit codes: 0 success, 1 usage, 2 data or input error, 3 numeric failure.

mod commands;
mod manifest;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "prodintent", version, about = "Query to product intent pipeline")]
struct Cli {
    /// Print progress and final results on stdout as JSON lines.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// Seed for every random choice the subcommand makes.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Where to write the run manifest (default: inside the output directory).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic catalog, corpus, click log and query sets.
    Synth(SynthArgs),
    /// Aggregate clicks, build labeled sources, merge and split.
    Ingest(IngestArgs),
    /// Build the word vocabulary from a corpus.
    BuildVocab(BuildVocabArgs),
    /// Pretrain the encoder with masked language modeling.
    Pretrain(PretrainArgs),
    /// Train the classifier head and fine-tune the encoder.
    Train(TrainArgs),
    /// Micro-averaged metrics and annotation accuracy.
    Evaluate(EvaluateArgs),
    /// Compare card surfacing of the gazetteer and the trained model.
    AbReport(AbReportArgs),
    /// Write a CSV sheet of model predictions for human judgment.
    AnnotateExport(AnnotateExportArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file with generator settings; missing fields take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[command(flatten)]
    pub common: Common,
    /// Directory in the synth layout; files that are absent are skipped.
    #[arg(long)]
    pub data: PathBuf,
    /// Catalog file (default: DATA/catalog.json).
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    /// Additional click logs, such as server feedback logs.
    #[arg(long = "clicks")]
    pub extra_clicks: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = prodintent::data_pipeline::DEFAULT_W_MIN)]
    pub w_min: f64,
    #[arg(long, default_value_t = prodintent::data_pipeline::DEFAULT_TEST_FRACTION)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = 0.1)]
    pub validation_fraction: f64,
}

#[derive(Debug, Args)]
pub struct BuildVocabArgs {
    #[command(flatten)]
    pub common: Common,
    /// One document per line.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub min_frequency: usize,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Encoder checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file with encoder shape and optimizer settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Zero keeps the seeded random initialization.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Output directory of `ingest`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub catalog: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Pretrained (or freshly initialized) encoder checkpoint.
    #[arg(long)]
    pub encoder: PathBuf,
    /// Model directory to write.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file with classifier settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub freeze_epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub encoder_lr: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Model directory written by `train`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Catalog file (default: MODEL/catalog.json).
    #[arg(long)]
    pub catalog: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Rows with a query and `labels` or `products`; repeatable.
    #[arg(long)]
    pub data: Vec<PathBuf>,
    /// Precomputed scores (`{"query", "scores": {product: score}}` lines)
    /// instead of a model.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Planted ground truth; overrides row labels where present.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Judged annotation sheet.
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AbReportArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Query log (JSON lines with `query`, optional `products` and `kind`).
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long, default_value_t = 3)]
    pub top_k: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnnotateExportArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Plain text (one query per line) or JSON lines with a `query` field.
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long, default_value_t = 3)]
    pub top_k: usize,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Server config JSON (default: $PRODINTENT_CONFIG).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub addr: Option<String>,
    #[arg(long)]
    pub feedback_log: Option<PathBuf>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub tau_ac: Option<f64>,
    #[arg(long)]
    pub top_k: Option<usize>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => f.write_str(m),
        }
    }
}

impl From<prodintent::Error> for CliError {
    fn from(e: prodintent::Error) -> Self {
        if e.is_numeric() {
            CliError::Numeric(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

impl From<prodintent_server::ServeError> for CliError {
    fn from(e: prodintent_server::ServeError) -> Self {
        match e {
            prodintent_server::ServeError::Model(e) => e.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let out = commands::Reporter { json: cli.json };
    let result = match cli.command {
        Command::Synth(a) => commands::synth(&a, &out),
        Command::Ingest(a) => commands::ingest(&a, &out),
        Command::BuildVocab(a) => commands::build_vocab(&a, &out),
        Command::Pretrain(a) => commands::pretrain(&a, &out),
        Command::Train(a) => commands::train(&a, &out),
        Command::Evaluate(a) => commands::evaluate(&a, &out),
        Command::AbReport(a) => commands::ab_report(&a, &out),
        Command::AnnotateExport(a) => commands::annotate_export(&a, &out),
        Command::Serve(a) => commands::serve(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
