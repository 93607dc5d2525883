use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use factcheck_core::backend::{Cached, CompletionRequest, LlmBackend, Offline};
use factcheck_core::error::BackendError;
use factcheck_core::store::Cache;
use factcheck_core::tagger::HeuristicTagger;
use factcheck_core::{check_claim, Backends, Claim, Mode, PipelineConfig};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_factcheck"));
    for var in ["FACTCHECK_SEARCH_API_KEY", "FACTCHECK_SEARCH_ENGINE_ID", "FACTCHECK_LLM_API_KEY"] {
        cmd.env_remove(var);
    }
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A recorded synthetic corpus shared by the replay tests.
struct Demo {
    _tmp: tempfile::TempDir,
    dir: PathBuf,
}

impl Demo {
    fn new() -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("demo");
        let o = run(&["record-fixtures", "--synthetic", dir.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        Self { _tmp: tmp, dir }
    }

    fn config(&self) -> String {
        self.dir.join("factcheck.toml").display().to_string()
    }

    fn dataset(&self) -> String {
        self.dir.join("dataset.jsonl").display().to_string()
    }
}

const CLAIM: &str = "The bridge of Aldmere opened in 1850.";

#[test]
fn help_lists_every_documented_flag() {
    let readme = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../README.md")).unwrap();
    let mut checked = 0;
    for line in readme.lines().filter(|l| l.starts_with("| `--")) {
        let flag = line[3..].split(['`', ' ']).next().unwrap();
        let commands = line.rsplit('|').nth(1).unwrap().trim();
        let commands: Vec<&str> = if commands == "all" {
            vec!["check", "eval", "ablate", "record-fixtures"]
        } else {
            commands.split(", ").collect()
        };
        for cmd in commands {
            let help = stdout(&run(&[cmd, "--help"]));
            assert!(
                help.contains(&format!("{flag} ")) || help.contains(&format!("{flag}\n")),
                "`{cmd} --help` does not list {flag}"
            );
            checked += 1;
        }
    }
    assert!(checked > 40, "only {checked} flag/command pairs found in README");
}

#[test]
fn every_config_field_has_a_flag() {
    // Serialize the defaults and look for each leaf field in the README flag table.
    let text = toml::to_string(&PipelineConfig::default()).unwrap();
    let readme = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../README.md")).unwrap();
    let mut section = String::new();
    for line in text.lines() {
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = name.to_string();
            continue;
        }
        let Some((key, _)) = line.split_once(" = ") else { continue };
        if section == "prompts" {
            continue;
        }
        let field = format!("`{section}.{key}`");
        assert!(
            readme.lines().any(|l| l.starts_with("| `--") && l.contains(&field)),
            "no flag documented for {field}"
        );
    }
}

#[test]
fn missing_api_key_names_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cache = tmp.path().join("cache");
    let o = run(&["check", "--claim", CLAIM, "--cache-dir", cache.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.contains("search.api_key"), "{err}");

    let o = run(&["check", "--claim", CLAIM, "--search-api-key", "k"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("search.engine_id"));
}

#[test]
fn invalid_values_exit_with_an_error() {
    let o = run(&["check", "--claim", CLAIM, "--top-k", "0", "--offline"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("top_k_selected"));
    let o = run(&["check", "--claim", CLAIM, "--mode", "4"]);
    assert!(!o.status.success());
    let o = run(&["check", "--claim", "   ", "--offline"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn check_replays_from_the_recorded_cache() {
    let demo = Demo::new();
    let cfg = demo.config();
    let args = ["check", "--config", &cfg, "--offline", "--claim", CLAIM];
    let first = run(&args);
    assert_eq!(first.status.code(), Some(0), "{}", stderr(&first));
    let out = stdout(&first);
    assert!(out.contains("label: SUPPORTED"), "{out}");
    assert!(out.contains("\nevidence:\n  [1] "), "{out}");
    assert!(out.contains("https://records.example.org/c0/archive"));
    for _ in 0..2 {
        let again = run(&args);
        assert_eq!(again.status.code(), Some(0));
        assert_eq!(stdout(&again), out);
    }

    let json = stdout(&run(&["check", "--config", &cfg, "--offline", "--json", "--claim", CLAIM]));
    assert!(json.starts_with('{') && json.contains("\"label\":\"SUPPORTED\""), "{json}");
}

#[test]
fn one_module_output_has_no_evidence_section() {
    let demo = Demo::new();
    let o = run(&["check", "--config", &demo.config(), "--offline", "--mode", "1", "--claim", CLAIM]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("mode: 1-module"));
    assert!(!out.lines().any(|l| l.starts_with("evidence")), "{out}");
    assert!(!out.contains("https://"));
}

#[test]
fn uncached_call_offline_is_a_hard_error() {
    let demo = Demo::new();
    let o = run(&["check", "--config", &demo.config(), "--offline", "--claim", "Never recorded."]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("offline"), "{}", stderr(&o));
}

struct Garbage;

impl LlmBackend for Garbage {
    fn complete(&self, _: &CompletionRequest) -> Result<String, BackendError> {
        Ok("I would rather not say.".into())
    }
}

#[test]
fn unparseable_verdict_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cache_dir = tmp.path().join("cache");
    // Record a label-free completion for the one-module prompt.
    let mut cfg = PipelineConfig::default();
    cfg.pipeline.mode = Mode::OneModule;
    cfg.cache.dir = cache_dir.clone();
    let llm = Cached::new(Garbage, Cache::new(&cache_dir));
    let backends = Backends {
        search: &Offline,
        llm: &llm,
        embedder: &Offline,
        tagger: &HeuristicTagger,
    };
    check_claim(&Claim::new(CLAIM).unwrap(), &cfg, backends).unwrap();

    let args = ["check", "--offline", "--mode", "1", "--cache-dir", cache_dir.to_str().unwrap(), "--claim", CLAIM];
    for _ in 0..3 {
        let o = run(&args);
        assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
        assert!(stdout(&o).contains("label: NEI"));
    }
}

#[test]
fn eval_writes_report_markdown_and_log() {
    let demo = Demo::new();
    let report = demo.dir.join("out/r.json");
    let o = run(&[
        "eval", "--config", &demo.config(), "--offline", "--dataset", &demo.dataset(),
        "--limit", "12", "--seed", "3", "--report", report.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let json = std::fs::read_to_string(&report).unwrap();
    assert!(json.contains("\"n\": 12"), "{json}");
    let md = std::fs::read_to_string(demo.dir.join("out/r.md")).unwrap();
    assert!(md.contains("Accuracy (A)"));
    assert_eq!(stdout(&o).matches("| 12 | 100.00 |").count(), 1);
    let log = std::fs::read_to_string(demo.dir.join("out/r.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 12);
}

#[test]
fn ablate_prints_three_rows_and_replays_without_calls() {
    let demo = Demo::new();
    let report = demo.dir.join("ablation.md");
    let args = [
        "ablate", "--config", &demo.config(), "--offline", "--dataset", &demo.dataset(),
        "--report", report.to_str().unwrap(),
    ];
    let first = run(&args);
    assert!(first.status.success(), "{}", stderr(&first));
    let table = stdout(&first);
    let rows: Vec<&str> = table.lines().filter(|l| l.starts_with("| LLM-")).collect();
    assert_eq!(rows.len(), 3, "{table}");
    assert!(rows[0].starts_with("| LLM-3-module | 100.00 |"));
    assert!(rows[1].starts_with("| LLM-2-module | 66.67 |"));
    assert!(rows[2].starts_with("| LLM-1-module | 33.33 |"));
    assert_eq!(std::fs::read_to_string(&report).unwrap(), table);
    // --offline means any cache miss would have failed a claim.
    let json = std::fs::read_to_string(demo.dir.join("ablation.json")).unwrap();
    assert_eq!(json.matches("\"failed_parses\": 0").count(), 3);
    assert_eq!(stdout(&run(&args)), table);
}

#[test]
fn record_fixtures_refuses_offline() {
    let o = run(&["record-fixtures", "--offline", "--claim", CLAIM]);
    assert_eq!(o.status.code(), Some(1));
}
