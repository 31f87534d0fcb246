use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{PipelineSection, Settings};

#[derive(Debug, Parser)]
#[command(
    name = "relmem",
    version,
    about = "Answer questions over a collection of SQLite databases with an external LLM",
    propagate_version = true
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// Configuration file (TOML) [env: RELMEM_CONFIG]
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Store directory holding the catalog and indexes
    #[arg(long, global = true, value_name = "DIR")]
    pub store: Option<PathBuf>,
    /// Completion endpoint base URL
    #[arg(long, global = true, value_name = "URL")]
    pub llm_url: Option<String>,
    /// Use a scripted mock completion provider (JSON Lines rules)
    #[arg(long, global = true, value_name = "FILE")]
    pub mock_script: Option<PathBuf>,
    /// Embedding endpoint base URL (default: offline hashing embedder)
    #[arg(long, global = true, value_name = "URL")]
    pub embedding_url: Option<String>,
    /// Dimension of the remote embedding endpoint
    #[arg(long, global = true, value_name = "N")]
    pub embedding_dimension: Option<usize>,
    /// Candidate databases taken from the selection memory
    #[arg(long, global = true, value_name = "N")]
    pub k_databases: Option<usize>,
    /// Candidate values per column taken from the value memory
    #[arg(long, global = true, value_name = "N")]
    pub k_values: Option<usize>,
    /// Error-driven correction attempts per query
    #[arg(long, global = true, value_name = "N")]
    pub max_correction_attempts: Option<usize>,
    /// Rows of each result shown to the LLM
    #[arg(long, global = true, value_name = "N")]
    pub result_truncation_rows: Option<usize>,
    /// Per-query execution timeout
    #[arg(long, global = true, value_name = "SECS")]
    pub execution_timeout_secs: Option<f64>,
    /// Skip value grounding
    #[arg(long, global = true)]
    pub no_value_memory: bool,
    /// Leave stage durations out of traces
    #[arg(long, global = true)]
    pub no_timings: bool,
}

impl GlobalArgs {
    pub fn as_settings(&self) -> Settings {
        let mut s = Settings {
            store: self.store.clone(),
            pipeline: PipelineSection {
                k_databases: self.k_databases,
                k_values: self.k_values,
                max_correction_attempts: self.max_correction_attempts,
                result_truncation_rows: self.result_truncation_rows,
                execution_timeout_secs: self.execution_timeout_secs,
                use_value_memory: self.no_value_memory.then_some(false),
                trace_timings: self.no_timings.then_some(false),
            },
            ..Default::default()
        };
        s.llm.url = self.llm_url.clone();
        s.llm.script = self.mock_script.clone();
        if self.mock_script.is_some() {
            s.llm.provider = Some("mock".into());
        } else if self.llm_url.is_some() {
            s.llm.provider = Some("http".into());
        }
        s.embedding.url = self.embedding_url.clone();
        s.embedding.dimension = self.embedding_dimension;
        if self.embedding_url.is_some() {
            s.embedding.provider = Some("http".into());
        }
        s
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Manage registered databases
    #[command(subcommand)]
    Catalog(CatalogCommand),
    /// Build the selection index and value memories
    #[command(subcommand)]
    Index(IndexCommand),
    /// Answer one question
    Ask(AskArgs),
    /// Answer questions read line by line from standard input
    Repl(ReplArgs),
    /// Write labeled (question, schema) pairs for a relevance classifier
    ComposeTrain(ComposeTrainArgs),
    /// Write two-database comparison questions built from single-database ones
    ComposeDouble(ComposeDoubleArgs),
    /// Evaluate against a dataset
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Serve the HTTP API
    Serve(ServeArgs),
}

#[derive(Debug, Subcommand)]
pub enum CatalogCommand {
    /// Register a SQLite database
    Add {
        /// Path to the database file
        path: PathBuf,
        /// Identifier used in plans and reports
        #[arg(long)]
        id: String,
        /// Display name shown to the LLM (default: the id)
        #[arg(long)]
        name: Option<String>,
    },
    /// List registered databases
    List {
        /// One JSON object per line
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Subcommand)]
pub enum IndexCommand {
    /// Build and persist indexes; with no flags both are built
    Build {
        /// Build the database selection index
        #[arg(long)]
        schemas: bool,
        /// Build the per-column value memories
        #[arg(long)]
        values: bool,
    },
}

#[derive(Debug, Args)]
pub struct AskArgs {
    /// The question
    pub question: String,
    /// Write the stage trace as JSON Lines to FILE, or to stderr without one
    #[arg(long, value_name = "FILE", num_args = 0..=1, default_missing_value = "-")]
    pub trace: Option<String>,
    /// Print the response as JSON
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ReplArgs {
    /// Print each response as JSON
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ComposeTrainArgs {
    /// JSON Lines file of {"question", "db_id"} pairs
    #[arg(long, value_name = "FILE")]
    pub questions: PathBuf,
    /// Output file (default: stdout)
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Negative schemas per positive
    #[arg(long, default_value_t = 1)]
    pub negatives: usize,
    /// Number of multi-question composites to add
    #[arg(long, default_value_t = 0)]
    pub composites: usize,
    /// Questions joined into each composite
    #[arg(long, default_value_t = 2)]
    pub composite_k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ComposeDoubleArgs {
    /// JSON Lines dataset; its single_db questions are paired
    #[arg(long, value_name = "FILE")]
    pub dataset: PathBuf,
    /// Output file (default: stdout)
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Number of composite questions
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Run the pipeline over a dataset and write report.json and report.txt
    Run {
        /// JSON Lines dataset
        #[arg(long, value_name = "FILE")]
        dataset: PathBuf,
        /// Report directory
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Questions answered concurrently
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
        parallelism: u16,
    },
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Port to listen on (default: from config, else 8000)
    #[arg(long)]
    pub port: Option<u16>,
    /// Address to bind
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
}
