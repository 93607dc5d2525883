mod args;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::Parser;
use factcheck_core::backend::{
    Cached, EmbeddingBackend, FixtureSearch, HashingEmbedder, HttpEmbedder, HttpLlm, LiveSearch,
    LlmBackend, Offline, OfflineEmbedder, SearchBackend,
};
use factcheck_core::config::{EmbeddingKind, SearchKind, TaggerKind};
use factcheck_core::eval::{
    load_fever, render_ablation_table, render_report, run_ablation, run_eval, stratified_sample,
    FeverRecord, ReportFormat,
};
use factcheck_core::store::{Cache, Namespace};
use factcheck_core::tagger::{HeuristicTagger, SidecarTagger, TaggerBackend};
use factcheck_core::testkit::{ScriptedLlm, SyntheticCorpus};
use factcheck_core::{check_claim, Backends, Claim, Mode, ParseStatus, PipelineConfig};

use args::{AblateArgs, CheckArgs, Cli, Command, CommonArgs, DatasetArgs, EvalArgs, RecordArgs};

/// Verdict output could not be parsed (label defaulted to NEI).
const EXIT_PARSE_FAILED: u8 = 2;

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("FACTCHECK_LOG")
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();

    let cli = Cli::parse();
    let result = match cli.command {
        Command::Check(a) => cmd_check(a),
        Command::Eval(a) => cmd_eval(a).map(|()| ExitCode::SUCCESS),
        Command::Ablate(a) => cmd_ablate(a).map(|()| ExitCode::SUCCESS),
        Command::RecordFixtures(a) => cmd_record(a).map(|()| ExitCode::SUCCESS),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("factcheck: error: {}", one_line(&format!("{e:#}")));
            ExitCode::FAILURE
        }
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Owned backends for one command.
struct Stack {
    search: Box<dyn SearchBackend>,
    llm: Box<dyn LlmBackend>,
    embedder: Box<dyn EmbeddingBackend>,
    tagger: Box<dyn TaggerBackend>,
}

impl Stack {
    fn backends(&self) -> Backends<'_> {
        Backends {
            search: &*self.search,
            llm: &*self.llm,
            embedder: &*self.embedder,
            tagger: &*self.tagger,
        }
    }

    /// Live (or offline) services, each behind the response cache.
    fn build(cfg: &PipelineConfig, offline: bool) -> anyhow::Result<Self> {
        if !offline {
            cfg.validate_live()?;
        }
        let cache = Cache::new(&cfg.cache.dir);
        let search: Box<dyn SearchBackend> = match cfg.search.kind {
            SearchKind::Fixture => {
                let dir = cfg
                    .search
                    .fixture_dir
                    .clone()
                    .context("missing required config field search.fixture_dir")?;
                Box::new(Cached::new(FixtureSearch::new(dir), cache.clone()))
            }
            SearchKind::Live if offline => Box::new(Cached::new(Offline, cache.clone())),
            SearchKind::Live => Box::new(Cached::new(
                LiveSearch::new(
                    &cfg.search.endpoint,
                    cfg.search.api_key.clone().unwrap_or_default(),
                    cfg.search.engine_id.clone().unwrap_or_default(),
                )?,
                cache.clone(),
            )),
        };
        let llm: Box<dyn LlmBackend> = if offline {
            Box::new(Cached::new(Offline, cache.clone()))
        } else {
            Box::new(Cached::new(
                HttpLlm::new(
                    &cfg.llm.endpoint,
                    cfg.llm.api_key.clone(),
                    Duration::from_secs(cfg.llm.timeout_secs),
                )?,
                cache.clone(),
            ))
        };
        let embedder: Box<dyn EmbeddingBackend> = match cfg.embedding.kind {
            EmbeddingKind::Hashing => Box::new(HashingEmbedder::new(cfg.embedding.dim)),
            EmbeddingKind::Http if offline => Box::new(Cached::new(
                OfflineEmbedder {
                    model: cfg.embedding.model.clone(),
                },
                cache,
            )),
            EmbeddingKind::Http => Box::new(Cached::new(
                HttpEmbedder::new(
                    &cfg.embedding.endpoint,
                    &cfg.embedding.model,
                    cfg.embedding.api_key.clone(),
                )?,
                cache,
            )),
        };
        Ok(Self {
            search,
            llm,
            embedder,
            tagger: build_tagger(cfg)?,
        })
    }
}

fn build_tagger(cfg: &PipelineConfig) -> anyhow::Result<Box<dyn TaggerBackend>> {
    Ok(match cfg.tagger.kind {
        TaggerKind::Heuristic => Box::new(HeuristicTagger),
        TaggerKind::Sidecar => {
            let command = cfg
                .tagger
                .command
                .as_deref()
                .context("missing required config field tagger.command")?;
            Box::new(SidecarTagger::spawn(
                command,
                Duration::from_millis(cfg.tagger.timeout_ms),
            )?)
        }
    })
}

// ---------------------------------------------------------------------------
// check

fn cmd_check(args: CheckArgs) -> anyhow::Result<ExitCode> {
    let cfg = args.common.resolve()?;
    let claim = Claim::new(args.claim)?;
    let stack = Stack::build(&cfg, args.common.offline)?;
    let bundle = check_claim(&claim, &cfg, stack.backends())?;

    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    if args.json {
        writeln!(out, "{}", bundle.to_json_line())?;
    } else {
        let v = &bundle.verdict;
        writeln!(out, "claim: {}", bundle.claim.text)?;
        writeln!(out, "mode: {}", v.mode)?;
        writeln!(out, "label: {}", v.label)?;
        writeln!(out, "explanation: {}", v.explanation)?;
        if v.mode != Mode::OneModule {
            writeln!(out, "\nevidence:")?;
            let items = bundle.evidence_used.items();
            if items.is_empty() {
                writeln!(out, "  (none retrieved)")?;
            }
            for (i, (item, score)) in items.into_iter().enumerate() {
                writeln!(out, "  [{}] {}", i + 1, item.text)?;
                match score {
                    Some(s) => writeln!(out, "      {}  (score {s:.4})", item.provenance.url)?,
                    None => writeln!(out, "      {}", item.provenance.url)?,
                }
            }
        }
    }
    for w in &bundle.warnings {
        eprintln!("warning: {w}");
    }
    Ok(match bundle.verdict.parse_status {
        ParseStatus::Ok | ParseStatus::Recovered => ExitCode::SUCCESS,
        ParseStatus::Failed => ExitCode::from(EXIT_PARSE_FAILED),
    })
}

// ---------------------------------------------------------------------------
// eval / ablate

fn load_records(data: &DatasetArgs) -> anyhow::Result<Vec<FeverRecord>> {
    let records = load_fever(&data.dataset)
        .with_context(|| format!("cannot load dataset {}", data.dataset.display()))?;
    if records.is_empty() {
        bail!("dataset {} has no records", data.dataset.display());
    }
    Ok(match data.limit {
        Some(n) => stratified_sample(&records, n, data.seed),
        None => records,
    })
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("cannot create {}", parent.display()))?;
    }
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn write_file(path: &Path, text: &str) -> anyhow::Result<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

/// JSON and markdown report paths for `--report PATH`.
fn report_paths(path: &Path) -> (PathBuf, PathBuf) {
    if path.extension().is_some_and(|e| e == "md") {
        (path.with_extension("json"), path.to_path_buf())
    } else {
        (path.to_path_buf(), path.with_extension("md"))
    }
}

fn cmd_eval(args: EvalArgs) -> anyhow::Result<()> {
    let cfg = args.common.resolve()?;
    let records = load_records(&args.data)?;
    let stack = Stack::build(&cfg, args.common.offline)?;

    let log_path = args
        .log
        .clone()
        .or_else(|| args.report.as_ref().map(|r| r.with_extension("jsonl")));
    let mut log: Box<dyn Write> = match &log_path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(std::io::sink()),
    };
    let run = run_eval(&records, &cfg, stack.backends(), &mut *log)?;
    drop(log);

    let markdown = render_report(&run.report, ReportFormat::Markdown);
    if let Some(path) = &args.report {
        let (json_path, md_path) = report_paths(path);
        write_file(&json_path, &render_report(&run.report, ReportFormat::Json))?;
        write_file(&md_path, &markdown)?;
    }
    println!("{} ({} claims)\n", cfg.pipeline.mode, run.report.n);
    print!("{markdown}");
    Ok(())
}

fn cmd_ablate(args: AblateArgs) -> anyhow::Result<()> {
    let cfg = args.common.resolve()?;
    let records = load_records(&args.data)?;
    let stack = Stack::build(&cfg, args.common.offline)?;
    let log_dir = args.log_dir.clone();
    let mut log_for = |mode: Mode| -> std::io::Result<Box<dyn Write>> {
        match &log_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                let path = dir.join(format!("mode{}.jsonl", mode.number()));
                Ok(Box::new(BufWriter::new(File::create(path)?)))
            }
            None => Ok(Box::new(std::io::sink())),
        }
    };
    let rows = run_ablation(&records, &cfg, stack.backends(), &mut log_for)?;
    let table = render_ablation_table(&rows);
    if let Some(path) = &args.report {
        let (json_path, md_path) = report_paths(path);
        let reports: Vec<_> = rows
            .iter()
            .map(|(mode, r)| serde_json_row(*mode, r))
            .collect::<anyhow::Result<_>>()?;
        write_file(&json_path, &format!("[\n{}\n]\n", reports.join(",\n")))?;
        write_file(&md_path, &table)?;
    }
    print!("{table}");
    Ok(())
}

fn serde_json_row(mode: Mode, report: &factcheck_core::eval::MetricsReport) -> anyhow::Result<String> {
    let json = render_report(report, ReportFormat::Json);
    Ok(format!("{{\"mode\": {}, \"report\": {json}}}", mode.number()))
}

// ---------------------------------------------------------------------------
// record-fixtures

fn cmd_record(args: RecordArgs) -> anyhow::Result<()> {
    if args.common.offline {
        bail!("record-fixtures needs live backends; drop --offline");
    }
    if let Some(dir) = &args.synthetic {
        return record_synthetic(dir, &args.common);
    }
    let cfg = args.common.resolve()?;
    let records = match (&args.dataset, &args.claim) {
        (Some(path), _) => load_records(&DatasetArgs {
            dataset: path.clone(),
            limit: args.limit,
            seed: args.seed,
        })?,
        (None, Some(text)) => vec![FeverRecord {
            id: 0,
            claim: text.clone(),
            gold: factcheck_core::Label::NotEnoughInfo,
        }],
        (None, None) => bail!("record-fixtures needs --dataset, --claim or --synthetic"),
    };
    let stack = Stack::build(&cfg, false)?;
    let modes = if args.modes.is_empty() { Mode::ALL.to_vec() } else { args.modes.clone() };
    record(&records, &cfg, stack.backends(), &modes)
}

fn record(
    records: &[FeverRecord],
    cfg: &PipelineConfig,
    backends: Backends<'_>,
    modes: &[Mode],
) -> anyhow::Result<()> {
    for &mode in modes {
        let mut c = cfg.clone();
        c.pipeline.mode = mode;
        let run = run_eval(records, &c, backends, &mut std::io::sink())?;
        let failed = run
            .lines
            .iter()
            .filter(|l| l.bundle.parse_status == ParseStatus::Failed)
            .count();
        eprintln!("recorded {mode}: {} claims, {failed} failed", run.report.n);
    }
    let cache = Cache::new(&cfg.cache.dir);
    let counts: Vec<String> = Namespace::ALL
        .iter()
        .map(|ns| format!("{ns} {}", cache.len(*ns)))
        .collect();
    println!("cache {}: {}", cfg.cache.dir.display(), counts.join(", "));
    Ok(())
}

/// Writes the synthetic corpus and a matching config, then fills the cache
/// using the scripted LLM so the corpus replays with `--offline`.
fn record_synthetic(dir: &Path, common: &CommonArgs) -> anyhow::Result<()> {
    let corpus = SyntheticCorpus::new(30);
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let dir = &dir.canonicalize()?;
    let fixtures = dir.join("fixtures");
    corpus
        .write_fixtures(&fixtures)
        .with_context(|| format!("cannot write fixtures under {}", fixtures.display()))?;
    corpus.write_dataset(&dir.join("dataset.jsonl"))?;
    let cache_dir = common.cache_dir.clone().unwrap_or_else(|| dir.join("cache"));
    let config_path = dir.join("factcheck.toml");
    write_file(
        &config_path,
        &format!(
            "[pipeline]\nrecord_timings = false\n\n[search]\nkind = \"fixture\"\nfixture_dir = {:?}\n\n\
             [embedding]\nkind = \"hashing\"\n\n[cache]\ndir = {:?}\n",
            fixtures.display().to_string(),
            cache_dir.display().to_string(),
        ),
    )?;
    let mut with_config = common.clone();
    with_config.config = Some(config_path.clone());
    let cfg = with_config.resolve()?;
    let cache = Cache::new(&cfg.cache.dir);
    let search = Cached::new(FixtureSearch::new(&fixtures), cache.clone());
    let llm = Cached::new(ScriptedLlm, cache);
    let embedder = HashingEmbedder::new(cfg.embedding.dim);
    let tagger = build_tagger(&cfg)?;
    let backends = Backends {
        search: &search,
        llm: &llm,
        embedder: &embedder,
        tagger: &*tagger,
    };
    record(&corpus.records(), &cfg, backends, &Mode::ALL)?;
    println!("config {}", config_path.display());
    Ok(())
}
