//! Command-line flags. Every config field has a flag; flags override the
//! config file, which overrides built-in defaults.

use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use factcheck_core::config::{EmbeddingKind, PromptKind, SearchKind, TaggerKind};
use factcheck_core::{Aggregation, Mode, PipelineConfig};

#[derive(Debug, Parser)]
#[command(name = "factcheck", version, about = "Verify claims against web search results with an LLM")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check one claim and print the label, explanation and evidence.
    Check(CheckArgs),
    /// Run a FEVER-style dataset and report accuracy and per-label P/R/F1.
    Eval(EvalArgs),
    /// Run the one-, two- and three-module pipelines over the same records.
    Ablate(AblateArgs),
    /// Populate the cache from live backends for later offline replay.
    RecordFixtures(RecordArgs),
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    /// Claim text.
    #[arg(long)]
    pub claim: String,
    /// Print the verdict bundle as one JSON line instead of text.
    #[arg(long)]
    pub json: bool,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    /// Line-delimited JSON with id, claim and label fields.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Evaluate a label-stratified sample of at most N records.
    #[arg(long, value_name = "N")]
    pub limit: Option<usize>,
    /// Seed for the --limit sample.
    #[arg(long, value_name = "S", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    /// Write the JSON report here and a markdown copy next to it (.md).
    #[arg(long, value_name = "PATH")]
    pub report: Option<PathBuf>,
    /// Run log (one JSON bundle per line). Defaults to the report path with
    /// a .jsonl extension.
    #[arg(long, value_name = "PATH")]
    pub log: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    /// Write the comparison table here (markdown) plus per-mode reports (.json).
    #[arg(long, value_name = "PATH")]
    pub report: Option<PathBuf>,
    /// Directory for one run log per mode.
    #[arg(long, value_name = "DIR")]
    pub log_dir: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct RecordArgs {
    /// Records to run; alternatively --claim or --synthetic.
    #[arg(long, conflicts_with_all = ["claim", "synthetic"])]
    pub dataset: Option<PathBuf>,
    /// A single claim to record.
    #[arg(long, conflicts_with = "synthetic")]
    pub claim: Option<String>,
    /// Write a scripted 30-claim demo corpus (fixtures, dataset, config)
    /// into DIR and record its cache without any network access.
    #[arg(long, value_name = "DIR")]
    pub synthetic: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    pub limit: Option<usize>,
    #[arg(long, value_name = "S", default_value_t = 0)]
    pub seed: u64,
    /// Modes to record; defaults to all three.
    #[arg(long = "modes", value_name = "1|2|3", value_delimiter = ',')]
    pub modes: Vec<Mode>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SearchFlag {
    Live,
    Fixture,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum EmbeddingFlag {
    Http,
    Hashing,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TaggerFlag {
    Heuristic,
    Sidecar,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML config file.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Forbid live backends: anything not in the cache is an error.
    #[arg(long)]
    pub offline: bool,

    /// Pipeline: 1 = LLM only, 2 = retrieval + LLM, 3 = retrieval + selection + LLM.
    #[arg(long, value_name = "1|2|3", help_heading = "Pipeline")]
    pub mode: Option<Mode>,
    #[arg(long, value_name = "N", help_heading = "Pipeline")]
    pub results_per_query: Option<usize>,
    /// Evidence items kept by similarity selection.
    #[arg(long = "top-k", value_name = "K", help_heading = "Pipeline")]
    pub top_k: Option<usize>,
    /// How sentence similarities combine into a candidate score.
    #[arg(long, value_name = "max|mean", help_heading = "Pipeline")]
    pub agg: Option<Aggregation>,
    #[arg(long, value_name = "T", help_heading = "Pipeline")]
    pub temperature: Option<f64>,
    /// Record per-stage timings in bundles (false gives byte-stable logs).
    #[arg(long, value_name = "BOOL", help_heading = "Pipeline")]
    pub record_timings: Option<bool>,
    /// Claims checked in parallel during eval.
    #[arg(long, value_name = "N", help_heading = "Pipeline")]
    pub workers: Option<usize>,

    #[arg(long, value_enum, help_heading = "Search")]
    pub search: Option<SearchFlag>,
    #[arg(long, value_name = "URL", help_heading = "Search")]
    pub search_endpoint: Option<String>,
    #[arg(long, value_name = "KEY", env = "FACTCHECK_SEARCH_API_KEY", hide_env_values = true, help_heading = "Search")]
    pub search_api_key: Option<String>,
    #[arg(long, value_name = "ID", env = "FACTCHECK_SEARCH_ENGINE_ID", help_heading = "Search")]
    pub search_engine_id: Option<String>,
    #[arg(long, value_name = "DIR", help_heading = "Search")]
    pub fixture_dir: Option<PathBuf>,

    #[arg(long, value_name = "URL", help_heading = "LLM")]
    pub llm_endpoint: Option<String>,
    #[arg(long, value_name = "NAME", help_heading = "LLM")]
    pub llm_model: Option<String>,
    #[arg(long, value_name = "KEY", env = "FACTCHECK_LLM_API_KEY", hide_env_values = true, help_heading = "LLM")]
    pub llm_api_key: Option<String>,
    #[arg(long, value_name = "SECS", help_heading = "LLM")]
    pub llm_timeout_secs: Option<u64>,

    #[arg(long, value_enum, help_heading = "Embedding")]
    pub embedding: Option<EmbeddingFlag>,
    #[arg(long, value_name = "URL", help_heading = "Embedding")]
    pub embedding_endpoint: Option<String>,
    #[arg(long, value_name = "NAME", help_heading = "Embedding")]
    pub embedding_model: Option<String>,
    #[arg(long, value_name = "KEY", env = "FACTCHECK_EMBEDDING_API_KEY", hide_env_values = true, help_heading = "Embedding")]
    pub embedding_api_key: Option<String>,
    /// Vector size of the hashing embedder.
    #[arg(long, value_name = "N", help_heading = "Embedding")]
    pub embedding_dim: Option<usize>,

    #[arg(long, value_name = "DIR", help_heading = "Cache")]
    pub cache_dir: Option<PathBuf>,

    #[arg(long, value_enum, help_heading = "Tagger")]
    pub tagger: Option<TaggerFlag>,
    /// Shell command that starts the tagger sidecar.
    #[arg(long, value_name = "CMD", help_heading = "Tagger")]
    pub tagger_command: Option<String>,
    #[arg(long, value_name = "MS", help_heading = "Tagger")]
    pub tagger_timeout_ms: Option<u64>,

    /// Replace a prompt exemplar with the contents of a file
    /// (KIND is filter, verdict or one_module; an empty file gives a zero-shot prompt).
    #[arg(long, value_name = "KIND=PATH", help_heading = "Prompts")]
    pub exemplar: Vec<String>,
}

impl CommonArgs {
    /// Defaults, then the config file, then flags.
    pub fn resolve(&self) -> anyhow::Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        macro_rules! set {
            ($flag:expr => $field:expr) => {
                if let Some(v) = $flag.clone() {
                    $field = v;
                }
            };
            ($flag:expr => some $field:expr) => {
                if let Some(v) = $flag.clone() {
                    $field = Some(v);
                }
            };
        }
        set!(self.mode => cfg.pipeline.mode);
        set!(self.results_per_query => cfg.pipeline.results_per_query);
        set!(self.top_k => cfg.pipeline.top_k_selected);
        set!(self.agg => cfg.pipeline.similarity_aggregation);
        set!(self.temperature => cfg.pipeline.llm_temperature);
        set!(self.record_timings => cfg.pipeline.record_timings);
        set!(self.workers => cfg.pipeline.workers);
        if let Some(kind) = self.search {
            cfg.search.kind = match kind {
                SearchFlag::Live => SearchKind::Live,
                SearchFlag::Fixture => SearchKind::Fixture,
            };
        }
        set!(self.search_endpoint => cfg.search.endpoint);
        set!(self.search_api_key => some cfg.search.api_key);
        set!(self.search_engine_id => some cfg.search.engine_id);
        set!(self.fixture_dir => some cfg.search.fixture_dir);
        set!(self.llm_endpoint => cfg.llm.endpoint);
        set!(self.llm_model => cfg.llm.model);
        set!(self.llm_api_key => some cfg.llm.api_key);
        set!(self.llm_timeout_secs => cfg.llm.timeout_secs);
        if let Some(kind) = self.embedding {
            cfg.embedding.kind = match kind {
                EmbeddingFlag::Http => EmbeddingKind::Http,
                EmbeddingFlag::Hashing => EmbeddingKind::Hashing,
            };
        }
        set!(self.embedding_endpoint => cfg.embedding.endpoint);
        set!(self.embedding_model => cfg.embedding.model);
        set!(self.embedding_api_key => some cfg.embedding.api_key);
        set!(self.embedding_dim => cfg.embedding.dim);
        set!(self.cache_dir => cfg.cache.dir);
        if let Some(kind) = self.tagger {
            cfg.tagger.kind = match kind {
                TaggerFlag::Heuristic => TaggerKind::Heuristic,
                TaggerFlag::Sidecar => TaggerKind::Sidecar,
            };
        }
        set!(self.tagger_command => some cfg.tagger.command);
        set!(self.tagger_timeout_ms => cfg.tagger.timeout_ms);
        for spec in &self.exemplar {
            let Some((kind, path)) = spec.split_once('=') else {
                bail!("--exemplar expects KIND=PATH, got {spec:?}");
            };
            let kind: PromptKind = kind.parse().map_err(anyhow::Error::msg)?;
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read exemplar file {path}"))?;
            cfg.prompts.0.insert(kind, text.trim_end().to_string());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
