//! Search query construction: the whole claim, plus a `;`-joined keyword
//! query built from nouns and noun chunks.

use serde::{Deserialize, Serialize};

use crate::error::TaggerError;
use crate::tagger::{TaggerBackend, Tagging};
use crate::types::Claim;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordSet {
    pub nouns: Vec<String>,
    pub noun_chunks: Vec<String>,
}

impl KeywordSet {
    pub fn is_empty(&self) -> bool {
        self.nouns.is_empty() && self.noun_chunks.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryKind {
    WholeClaim,
    Keyword,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchQuery {
    pub kind: QueryKind,
    pub text: String,
}

/// Trims, drops empties, removes case-insensitive duplicates, and orders by
/// first appearance in `claim`. Entries not found in the claim keep their
/// relative order after the ones that are.
fn normalize_list(claim: &str, entries: Vec<String>) -> Vec<String> {
    let claim_lower = claim.to_lowercase();
    let mut seen: Vec<String> = Vec::new();
    let mut kept: Vec<(usize, usize, String)> = Vec::new();
    for (i, entry) in entries.into_iter().enumerate() {
        let entry = entry.split_whitespace().collect::<Vec<_>>().join(" ");
        if entry.is_empty() {
            continue;
        }
        let lower = entry.to_lowercase();
        if seen.contains(&lower) {
            continue;
        }
        let pos = claim_lower.find(&lower).unwrap_or(usize::MAX);
        seen.push(lower);
        kept.push((pos, i, entry));
    }
    kept.sort_by_key(|(pos, i, _)| (*pos, *i));
    kept.into_iter().map(|(_, _, e)| e).collect()
}

pub fn normalize_tagging(claim_text: &str, tagging: Tagging) -> KeywordSet {
    KeywordSet {
        nouns: normalize_list(claim_text, tagging.nouns),
        noun_chunks: normalize_list(claim_text, tagging.noun_chunks),
    }
}

pub fn extract_keywords(
    claim_text: &str,
    tagger: &dyn TaggerBackend,
) -> Result<KeywordSet, TaggerError> {
    let tagging = tagger.tag(claim_text)?;
    Ok(normalize_tagging(claim_text, tagging))
}

/// Query segments: nouns then noun chunks, without case-insensitive repeats
/// and without `;` inside a segment.
pub fn keyword_segments(keywords: &KeywordSet) -> Vec<String> {
    let mut seen: Vec<String> = Vec::new();
    let mut out = Vec::new();
    for raw in keywords.nouns.iter().chain(&keywords.noun_chunks) {
        let seg = raw.replace(';', " ");
        let seg = seg.split_whitespace().collect::<Vec<_>>().join(" ");
        if seg.is_empty() {
            continue;
        }
        let lower = seg.to_lowercase();
        if seen.contains(&lower) {
            continue;
        }
        seen.push(lower);
        out.push(seg);
    }
    out
}

pub fn build_queries(claim: &Claim, keywords: &KeywordSet) -> Vec<SearchQuery> {
    let mut queries = vec![SearchQuery {
        kind: QueryKind::WholeClaim,
        text: claim.text.clone(),
    }];
    let segments = keyword_segments(keywords);
    if !segments.is_empty() {
        queries.push(SearchQuery {
            kind: QueryKind::Keyword,
            text: segments.join(";"),
        });
    }
    queries
}
