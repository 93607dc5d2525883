//! Candidate evidence retrieval: run both queries, keep the top results of
//! each, and merge them into one deduplicated pool.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tracing::debug;

use crate::backend::SearchBackend;
use crate::config::PipelineConfig;
use crate::error::BackendError;
use crate::query::{build_queries, extract_keywords, normalize_tagging, QueryKind, SearchQuery};
use crate::selection::EmbeddingVector;
use crate::tagger::{heuristic_tagging, TaggerBackend};
use crate::types::Claim;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchResult {
    pub title: String,
    pub url: String,
    pub snippet: String,
    /// 1-based position within its query's result page.
    pub rank: usize,
    pub source_kind: QueryKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub url: String,
    pub rank: usize,
    pub source_kind: QueryKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceItem {
    pub id: String,
    pub text: String,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<EmbeddingVector>,
}

impl EvidenceItem {
    /// Builds the evidence unit for one result: `title: snippet`, or whichever
    /// of the two is present. `None` when both are blank.
    pub fn from_result(result: &SearchResult) -> Option<Self> {
        let title = result.title.trim();
        let snippet = result.snippet.trim();
        let text = match (title.is_empty(), snippet.is_empty()) {
            (true, true) => return None,
            (false, true) => title.to_string(),
            (true, false) => snippet.to_string(),
            (false, false) => format!("{title}: {snippet}"),
        };
        Some(Self {
            id: evidence_id(&result.url, &result.snippet),
            text,
            provenance: Provenance {
                url: result.url.clone(),
                rank: result.rank,
                source_kind: result.source_kind,
            },
            embedding: None,
        })
    }
}

pub fn evidence_id(url: &str, snippet: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(normalize_url(url).as_bytes());
    hasher.update(b"\n");
    hasher.update(snippet.as_bytes());
    hex::encode(&hasher.finalize()[..8])
}

/// Lowercases scheme and host, drops the fragment and any trailing slash.
pub fn normalize_url(raw: &str) -> String {
    let trimmed = raw.trim();
    let normalized = match url::Url::parse(trimmed) {
        Ok(mut u) => {
            u.set_fragment(None);
            u.to_string()
        }
        Err(_) => {
            let no_fragment = trimmed.split('#').next().unwrap_or("");
            match no_fragment.split_once("://") {
                Some((scheme, rest)) => {
                    let (host, path) = rest.split_at(rest.find('/').unwrap_or(rest.len()));
                    format!("{}://{}{}", scheme.to_lowercase(), host.to_lowercase(), path)
                }
                None => no_fragment.to_string(),
            }
        }
    };
    normalized.trim_end_matches('/').to_string()
}

pub fn search(
    backend: &dyn SearchBackend,
    query: &SearchQuery,
    limit: usize,
) -> Result<Vec<SearchResult>, BackendError> {
    assert!(limit >= 1, "search limit must be positive");
    let items = backend.fetch(&query.text, limit)?;
    Ok(items
        .into_iter()
        .take(limit)
        .enumerate()
        .filter(|(_, item)| !item.link.trim().is_empty())
        .map(|(i, item)| SearchResult {
            title: item.title,
            url: item.link,
            snippet: item.snippet,
            rank: i + 1,
            source_kind: query.kind,
        })
        .collect())
}

fn kind_order(kind: QueryKind) -> u8 {
    match kind {
        QueryKind::WholeClaim => 0,
        QueryKind::Keyword => 1,
    }
}

/// Merges the per-query result lists.
///
/// Lists are interleaved by rank (whole-claim first at each rank). A url
/// seen more than once keeps only its best occurrence: lowest rank, then
/// whole-claim over keyword.
pub fn merge_results(lists: &[Vec<SearchResult>]) -> Vec<EvidenceItem> {
    let mut best: HashMap<String, (usize, u8)> = HashMap::new();
    for r in lists.iter().flatten() {
        let key = normalize_url(&r.url);
        let candidate = (r.rank, kind_order(r.source_kind));
        best.entry(key)
            .and_modify(|b| *b = (*b).min(candidate))
            .or_insert(candidate);
    }

    let mut ordered: Vec<&Vec<SearchResult>> = lists.iter().collect();
    ordered.sort_by_key(|l| l.first().map(|r| kind_order(r.source_kind)).unwrap_or(u8::MAX));
    let longest = ordered.iter().map(|l| l.len()).max().unwrap_or(0);

    let mut emitted: HashSet<String> = HashSet::new();
    let mut out = Vec::new();
    for pos in 0..longest {
        for list in &ordered {
            let Some(r) = list.get(pos) else { continue };
            let key = normalize_url(&r.url);
            if best[&key] != (r.rank, kind_order(r.source_kind)) || emitted.contains(&key) {
                continue;
            }
            match EvidenceItem::from_result(r) {
                Some(item) => {
                    emitted.insert(key);
                    out.push(item);
                }
                None => debug!(url = %r.url, "dropping result with no title or snippet"),
            }
        }
    }
    out
}

/// The candidate pool plus anything that went wrong on the way.
#[derive(Debug, Clone, Default)]
pub struct Candidates {
    pub queries: Vec<SearchQuery>,
    pub items: Vec<EvidenceItem>,
    pub warnings: Vec<String>,
}

pub fn retrieve_candidates(
    claim: &Claim,
    config: &PipelineConfig,
    backend: &dyn SearchBackend,
    tagger: &dyn TaggerBackend,
) -> Result<Candidates, BackendError> {
    let mut warnings = Vec::new();
    let keywords = match extract_keywords(&claim.text, tagger) {
        Ok(k) => k,
        Err(e) => {
            warnings.push(format!("{e}; using heuristic keyword extraction"));
            normalize_tagging(&claim.text, heuristic_tagging(&claim.text))
        }
    };
    let queries = build_queries(claim, &keywords);
    let limit = config.pipeline.results_per_query;

    let outcomes: Vec<Result<Vec<SearchResult>, BackendError>> = std::thread::scope(|s| {
        let handles: Vec<_> = queries
            .iter()
            .map(|q| s.spawn(move || search(backend, q, limit)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("search thread panicked"))
            .collect()
    });

    let mut lists = Vec::new();
    let mut first_error = None;
    for (query, outcome) in queries.iter().zip(outcomes) {
        match outcome {
            Ok(results) => lists.push(results),
            Err(e) => {
                warnings.push(format!(
                    "{} query failed: {e}",
                    match query.kind {
                        QueryKind::WholeClaim => "whole-claim",
                        QueryKind::Keyword => "keyword",
                    }
                ));
                first_error.get_or_insert(e);
            }
        }
    }
    if lists.is_empty() {
        return Err(first_error.expect("at least one query was issued"));
    }
    Ok(Candidates {
        queries,
        items: merge_results(&lists),
        warnings,
    })
}
