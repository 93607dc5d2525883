//! Verdict generation and the end-to-end claim check.
//!
//! The verdict prompt asks for `Label; Explanation` over numbered evidence
//! (`evidence1`, `evidence2`, ...). The one-module variant sends the claim
//! alone and asks for `Label; Evidence; Explanation`.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::backend::{EmbeddingBackend, LlmBackend, SearchBackend};
use crate::config::{PipelineConfig, PromptKind};
use crate::error::{BackendError, SelectionError};
use crate::prompts::{fill, one_line, with_exemplar, ONE_MODULE_TEMPLATE, VERDICT_TEMPLATE};
use crate::retrieval::{retrieve_candidates, EvidenceItem};
use crate::selection::{llm_filter, select_top_k, FilteredEvidence, LlmParams, SelectedEvidence};
use crate::tagger::TaggerBackend;
use crate::types::{map_label, Claim, Label, Mode, RawLlmLabel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseStatus {
    Ok,
    Recovered,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub label: Label,
    pub explanation: String,
    pub raw_output: String,
    pub parse_status: ParseStatus,
    pub mode: Mode,
}

/// Evidence that reached the verdict prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EvidenceUsed {
    None,
    /// The unscored candidate pool (two-module, or a selection fallback).
    Pool(Vec<EvidenceItem>),
    Selected(SelectedEvidence),
}

impl EvidenceUsed {
    pub fn len(&self) -> usize {
        match self {
            EvidenceUsed::None => 0,
            EvidenceUsed::Pool(items) => items.len(),
            EvidenceUsed::Selected(sel) => sel.items.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Items in prompt order with their scores, when scored.
    pub fn items(&self) -> Vec<(&EvidenceItem, Option<f64>)> {
        match self {
            EvidenceUsed::None => Vec::new(),
            EvidenceUsed::Pool(items) => items.iter().map(|i| (i, None)).collect(),
            EvidenceUsed::Selected(sel) => sel.items.iter().map(|s| (&s.item, Some(s.score))).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerdictBundle {
    pub claim: Claim,
    pub verdict: Verdict,
    pub evidence_used: EvidenceUsed,
    /// Milliseconds per stage; empty when timings are disabled.
    pub timings: BTreeMap<String, u64>,
    pub warnings: Vec<String>,
}

/// One evidence entry in the serialized bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceRecord {
    pub text: String,
    pub url: String,
    pub rank: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

/// Line-oriented JSON form of a [`VerdictBundle`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleRecord {
    pub claim: Claim,
    pub mode: Mode,
    pub label: Label,
    pub explanation: String,
    pub parse_status: ParseStatus,
    pub raw_output: String,
    pub evidence: Vec<EvidenceRecord>,
    pub warnings: Vec<String>,
    pub timings_ms: BTreeMap<String, u64>,
}

impl VerdictBundle {
    pub fn to_record(&self) -> BundleRecord {
        BundleRecord {
            claim: self.claim.clone(),
            mode: self.verdict.mode,
            label: self.verdict.label,
            explanation: self.verdict.explanation.clone(),
            parse_status: self.verdict.parse_status,
            raw_output: self.verdict.raw_output.clone(),
            evidence: self
                .evidence_used
                .items()
                .into_iter()
                .map(|(item, score)| EvidenceRecord {
                    text: item.text.clone(),
                    url: item.provenance.url.clone(),
                    rank: item.provenance.rank,
                    score,
                })
                .collect(),
            warnings: self.warnings.clone(),
            timings_ms: self.timings.clone(),
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&self.to_record()).expect("bundles serialize")
    }
}

// ---------------------------------------------------------------------------
// Prompts

pub fn render_verdict_prompt(claim: &Claim, evidence: &[EvidenceItem], exemplar: &str) -> String {
    let lines = evidence
        .iter()
        .enumerate()
        .map(|(i, item)| format!("evidence{}: {}", i + 1, one_line(&item.text)))
        .collect::<Vec<_>>()
        .join("\n");
    let instance = fill(
        VERDICT_TEMPLATE,
        &[("claim", claim.text.as_str()), ("evidence", &lines)],
    );
    with_exemplar(exemplar, instance)
}

pub fn render_one_module_prompt(claim: &Claim, exemplar: &str) -> String {
    with_exemplar(
        exemplar,
        fill(ONE_MODULE_TEMPLATE, &[("claim", claim.text.as_str())]),
    )
}

// ---------------------------------------------------------------------------
// Output parsing

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedVerdict {
    /// `Uncertain` when parsing failed.
    pub label: RawLlmLabel,
    pub explanation: String,
    pub status: ParseStatus,
}

impl ParsedVerdict {
    pub fn label(&self) -> Label {
        match self.status {
            ParseStatus::Failed => Label::NotEnoughInfo,
            _ => map_label(self.label),
        }
    }
}

fn strip_prefix_ci<'a>(s: &'a str, prefix: &str) -> Option<&'a str> {
    let head = s.get(..prefix.len())?;
    head.eq_ignore_ascii_case(prefix).then(|| &s[prefix.len()..])
}

/// `[Label:] <token> <; | . | newline> [Explanation:] <explanation>`
fn parse_strict(raw: &str) -> Option<(RawLlmLabel, String)> {
    let s = raw.trim_start();
    let s = strip_prefix_ci(s, "label:").map(str::trim_start).unwrap_or(s);
    let token_len = s
        .char_indices()
        .find(|(_, c)| !c.is_ascii_alphabetic())
        .map(|(i, _)| i)
        .unwrap_or(s.len());
    let label = RawLlmLabel::from_token(&s[..token_len])?;
    let rest = s[token_len..].trim_start_matches([' ', '\t', '\r']);
    let rest = match rest.chars().next() {
        Some(';' | '.' | '\n') => &rest[1..],
        _ => return None,
    };
    let rest = rest.trim();
    let explanation = strip_prefix_ci(rest, "explanation:")
        .map(str::trim)
        .unwrap_or(rest);
    (!explanation.is_empty()).then(|| (label, explanation.to_string()))
}

/// First whole-word label token within the first 200 characters.
fn find_label_token(raw: &str) -> Option<RawLlmLabel> {
    let head: String = raw.chars().take(200).collect();
    head.split(|c: char| !c.is_alphanumeric() && c != '_')
        .find_map(RawLlmLabel::from_token)
}

pub fn parse_verdict(raw: &str) -> ParsedVerdict {
    if let Some((label, explanation)) = parse_strict(raw) {
        return ParsedVerdict {
            label,
            explanation,
            status: ParseStatus::Ok,
        };
    }
    match find_label_token(raw) {
        Some(label) => ParsedVerdict {
            label,
            explanation: raw.trim().to_string(),
            status: ParseStatus::Recovered,
        },
        None => ParsedVerdict {
            label: RawLlmLabel::Uncertain,
            explanation: raw.trim().to_string(),
            status: ParseStatus::Failed,
        },
    }
}

/// The explanation part of a `Evidence: ...; Explanation: ...` remainder.
fn one_module_explanation(text: &str) -> String {
    let lower = text.to_ascii_lowercase();
    match lower.find("explanation:") {
        Some(pos) => {
            let after = text[pos + "explanation:".len()..].trim();
            if after.is_empty() {
                text.to_string()
            } else {
                after.to_string()
            }
        }
        None => text.to_string(),
    }
}

// ---------------------------------------------------------------------------
// Orchestration

/// Backend handles for one pipeline run.
#[derive(Clone, Copy)]
pub struct Backends<'a> {
    pub search: &'a dyn SearchBackend,
    pub llm: &'a dyn LlmBackend,
    pub embedder: &'a dyn EmbeddingBackend,
    pub tagger: &'a dyn TaggerBackend,
}

struct Stopwatch {
    enabled: bool,
    timings: BTreeMap<String, u64>,
}

impl Stopwatch {
    fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        if self.enabled {
            self.timings
                .insert(stage.to_string(), start.elapsed().as_millis() as u64);
        }
        out
    }
}

/// Runs the configured pipeline for one claim.
///
/// Only a failure of the verdict LLM call is an error; retrieval, filtering
/// and selection problems degrade and are reported in `warnings`.
pub fn check_claim(
    claim: &Claim,
    config: &PipelineConfig,
    backends: Backends<'_>,
) -> Result<VerdictBundle, BackendError> {
    let mode = config.pipeline.mode;
    let params = LlmParams {
        model: config.llm.model.clone(),
        temperature: config.pipeline.llm_temperature,
    };
    let mut clock = Stopwatch {
        enabled: config.pipeline.record_timings,
        timings: BTreeMap::new(),
    };
    let mut warnings = Vec::new();

    let evidence_used = match mode {
        Mode::OneModule => EvidenceUsed::None,
        Mode::TwoModule | Mode::ThreeModule => {
            let pool = clock.time("retrieval", || {
                retrieve_candidates(claim, config, backends.search, backends.tagger)
            });
            let pool = match pool {
                Ok(c) => {
                    warnings.extend(c.warnings);
                    c.items
                }
                Err(e) => {
                    warnings.push(format!("retrieval failed: {e}"));
                    Vec::new()
                }
            };
            if mode == Mode::TwoModule || pool.is_empty() {
                EvidenceUsed::Pool(pool)
            } else {
                select_evidence(claim, config, backends, &params, pool, &mut clock, &mut warnings)
            }
        }
    };

    let evidence: Vec<EvidenceItem> = evidence_used.items().into_iter().map(|(i, _)| i.clone()).collect();
    let prompt = if mode == Mode::OneModule || evidence.is_empty() {
        if mode != Mode::OneModule {
            warnings.push("no evidence retrieved; verdict prompt rendered without evidence".into());
        }
        render_one_module_prompt(claim, config.prompts.get(PromptKind::OneModule))
    } else {
        render_verdict_prompt(claim, &evidence, config.prompts.get(PromptKind::Verdict))
    };
    let raw = clock.time("verdict", || backends.llm.complete(&params.request(prompt)))?;

    let parsed = parse_verdict(&raw);
    match parsed.status {
        ParseStatus::Ok => {}
        ParseStatus::Recovered => warnings.push("verdict label recovered by fallback parse".into()),
        ParseStatus::Failed => {
            warnings.push("verdict output unparseable; label defaulted to NEI".into())
        }
    }
    let explanation = if mode == Mode::OneModule && parsed.status == ParseStatus::Ok {
        one_module_explanation(&parsed.explanation)
    } else {
        parsed.explanation.clone()
    };
    Ok(VerdictBundle {
        claim: claim.clone(),
        verdict: Verdict {
            label: parsed.label(),
            explanation,
            raw_output: raw,
            parse_status: parsed.status,
            mode,
        },
        evidence_used,
        timings: clock.timings,
        warnings,
    })
}

fn select_evidence(
    claim: &Claim,
    config: &PipelineConfig,
    backends: Backends<'_>,
    params: &LlmParams,
    pool: Vec<EvidenceItem>,
    clock: &mut Stopwatch,
    warnings: &mut Vec<String>,
) -> EvidenceUsed {
    let k = config.pipeline.top_k_selected;
    let filtered = clock.time("filter", || {
        llm_filter(
            claim,
            &pool,
            backends.llm,
            params,
            config.prompts.get(PromptKind::Filter),
        )
    });
    let filtered = match filtered {
        Ok(f) => f,
        Err(SelectionError::EmptyFilter) => {
            warnings.push("LLM filter returned no sentences; retaining whole pool".into());
            FilteredEvidence::whole_pool(&pool)
        }
        Err(e) => {
            warnings.push(format!("LLM filter failed ({e}); retaining whole pool"));
            FilteredEvidence::whole_pool(&pool)
        }
    };
    let selected = clock.time("selection", || {
        select_top_k(
            &filtered,
            &pool,
            backends.embedder,
            k,
            config.pipeline.similarity_aggregation,
        )
    });
    match selected {
        Ok(sel) => EvidenceUsed::Selected(sel),
        Err(e) => {
            warnings.push(format!(
                "similarity selection failed ({e}); using the first {k} candidates"
            ));
            EvidenceUsed::Pool(pool.into_iter().take(k).collect())
        }
    }
}
