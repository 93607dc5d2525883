//! Deterministic stand-ins for the network services: a synthetic labelled
//! corpus with recorded search pages, a scripted LLM that reads the prompts
//! the pipeline renders, and a lookup-table embedder.
//!
//! Used by the test suites and by `factcheck record-fixtures --synthetic`.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use crate::backend::{
    CompletionRequest, EmbeddingBackend, FixtureSearch, LlmBackend, SearchItem, SearchPage,
};
use crate::config::{EmbeddingKind, PipelineConfig, SearchKind, TaggerKind};
use crate::error::BackendError;
use crate::eval::FeverRecord;
use crate::query::{build_queries, extract_keywords};
use crate::tagger::HeuristicTagger;
use crate::types::{Claim, Label};

/// Marks the misleading item planted for some claims. The scripted LLM is
/// swayed by it whenever it appears in a verdict prompt, and never lists it
/// when filtering.
pub const DISTRACTOR_MARKER: &str = "unverified forum rumor";

const PLACES: [&str; 10] = [
    "Aldmere", "Brisk", "Corvale", "Dunmoor", "Eastwick", "Farhold", "Glenrock", "Harrow",
    "Ivybridge", "Jorvik",
];
const THINGS: [&str; 6] = ["bridge", "library", "observatory", "harbor", "museum", "railway"];

#[derive(Debug, Clone)]
pub struct SyntheticClaim {
    pub record: FeverRecord,
    pub has_distractor: bool,
    /// Result pages keyed by query text.
    pub pages: Vec<(String, SearchPage)>,
}

/// A small labelled corpus whose outcome per pipeline mode is known in advance.
///
/// Labels cycle SUPPORTED, REFUTED, NEI, and one claim in each run of three
/// carries a distractor (10 of 30, rotating through the labels). With the
/// scripted LLM the three-module pipeline scores every claim correctly, the two-module pipeline is misled on the
/// distractor claims, and the one-module pipeline answers Uncertain
/// throughout.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub claims: Vec<SyntheticClaim>,
}

fn item(url: String, title: String, snippet: String) -> SearchItem {
    SearchItem {
        title,
        link: url,
        snippet,
    }
}

impl SyntheticCorpus {
    pub fn new(n: usize) -> Self {
        let claims = (0..n).map(synthetic_claim).collect();
        Self { claims }
    }

    pub fn records(&self) -> Vec<FeverRecord> {
        self.claims.iter().map(|c| c.record.clone()).collect()
    }

    /// Writes one fixture page per query into `dir`.
    pub fn write_fixtures(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        for c in &self.claims {
            for (q, page) in &c.pages {
                FixtureSearch::write(dir, q, page)?;
            }
        }
        Ok(())
    }

    /// Writes the dataset as FEVER-style JSON lines.
    pub fn write_dataset(&self, path: &Path) -> std::io::Result<()> {
        let mut out = String::new();
        for c in &self.claims {
            let label = match c.record.gold {
                Label::Supported => "SUPPORTS",
                Label::Refuted => "REFUTES",
                Label::NotEnoughInfo => "NOT ENOUGH INFO",
            };
            let line = serde_json::json!({
                "id": c.record.id,
                "verifiable": if c.record.gold == Label::NotEnoughInfo { "NOT VERIFIABLE" } else { "VERIFIABLE" },
                "label": label,
                "claim": c.record.claim,
                "evidence": [],
            });
            out.push_str(&line.to_string());
            out.push('\n');
        }
        std::fs::write(path, out)
    }
}

fn synthetic_claim(i: usize) -> SyntheticClaim {
    let gold = Label::ALL[i % 3];
    let has_distractor = i % 3 == (i / 3) % 3;
    let place = PLACES[i % PLACES.len()];
    let thing = THINGS[(i / PLACES.len()) % THINGS.len()];
    let year = 1850 + 7 * i;
    let text = format!("The {thing} of {place} opened in {year}.");
    let tag = format!("c{i}");

    let stance = match gold {
        Label::Supported => "confirms",
        Label::Refuted => "refutes",
        Label::NotEnoughInfo => "mentions",
    };
    let mut whole = Vec::new();
    whole.push(item(
        format!("https://records.example.org/{tag}/archive"),
        format!("{place} {thing} archive"),
        format!("The municipal archive {stance} the {year} opening of the {thing} of {place}."),
    ));
    for j in 1..5 {
        whole.push(item(
            format!("https://records.example.org/{tag}/note-{j}"),
            format!("{place} {thing} history note {j}"),
            format!("Relevant note {j} describes the {thing} of {place} and its construction."),
        ));
    }
    if has_distractor {
        let lie = match gold {
            Label::Supported => "refutes",
            Label::Refuted | Label::NotEnoughInfo => "confirms",
        };
        whole.push(item(
            format!("https://forum.example.net/{tag}/thread"),
            format!("{place} gossip board"),
            format!("An {DISTRACTOR_MARKER} {lie} the {year} opening story of the {thing}."),
        ));
    }
    for j in 0..3 {
        whole.push(item(
            format!("https://noise.example.com/{tag}/{j}"),
            format!("Weather in {place}"),
            format!("Unrelated forecast {j}: rain and wind for the weekend."),
        ));
    }

    let claim = Claim::new(text.clone()).expect("synthetic claim text is non-empty");
    let keywords = extract_keywords(&text, &HeuristicTagger).expect("heuristic tagger is infallible");
    let queries = build_queries(&claim, &keywords);
    let mut pages = vec![(text.clone(), SearchPage { items: whole.clone() })];
    if let Some(kw) = queries.get(1) {
        // The keyword query repeats two of the whole-claim hits and adds noise.
        let mut items = vec![whole[1].clone(), whole[0].clone()];
        items.push(item(
            format!("https://travel.example.com/{tag}"),
            format!("Visiting {place}"),
            format!("Travel guide {i} lists hotels and restaurants."),
        ));
        pages.push((kw.text.clone(), SearchPage { items }));
    }
    SyntheticClaim {
        record: FeverRecord {
            id: 1000 + i as u64,
            claim: text,
            gold,
        },
        has_distractor,
        pages,
    }
}

/// Configuration for replaying a synthetic corpus from fixtures with the
/// hashing embedder, heuristic tagger and timings off.
pub fn synthetic_config(fixture_dir: &Path, cache_dir: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.search.kind = SearchKind::Fixture;
    cfg.search.fixture_dir = Some(fixture_dir.to_path_buf());
    cfg.embedding.kind = EmbeddingKind::Hashing;
    cfg.tagger.kind = TaggerKind::Heuristic;
    cfg.cache.dir = cache_dir.to_path_buf();
    cfg.pipeline.record_timings = false;
    cfg
}

// ---------------------------------------------------------------------------
// Scripted LLM

/// Answers the filter, verdict and one-module prompts by reading them.
///
/// * filter: lists evidence lines sharing two or more words with the
///   claim, never a distractor;
/// * verdict: follows a distractor if one is present, otherwise answers
///   True for "confirms", False for "refutes", else Uncertain;
/// * one-module: always Uncertain.
#[derive(Debug, Default, Clone, Copy)]
pub struct ScriptedLlm;

fn instance_part(prompt: &str) -> &str {
    // The exemplar also contains a `Claim:` line; the instance is the last one.
    match prompt.rfind("Claim: ") {
        Some(i) => &prompt[i..],
        None => prompt,
    }
}

fn evidence_lines(instance: &str) -> Vec<&str> {
    let Some(start) = instance.find("Evidence:\n") else {
        return Vec::new();
    };
    let body = &instance[start + "Evidence:\n".len()..];
    let end = body.find("\nYour output is").unwrap_or(body.len());
    body[..end].lines().filter(|l| !l.trim().is_empty()).collect()
}

fn strip_number(line: &str) -> &str {
    // `N. text` in filter prompts, `evidenceN: text` in verdict prompts.
    let line = line.trim();
    let line = line.strip_prefix("evidence").unwrap_or(line);
    let digits = line.chars().take_while(char::is_ascii_digit).count();
    line[digits..].trim_start_matches(['.', ':']).trim()
}

fn content_words(text: &str) -> HashSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| w.len() > 3)
        .map(str::to_lowercase)
        .collect()
}

fn stance(text: &str) -> Option<&'static str> {
    if text.contains("confirms") {
        Some("True")
    } else if text.contains("refutes") {
        Some("False")
    } else {
        None
    }
}

impl ScriptedLlm {
    pub fn answer(prompt: &str) -> String {
        let instance = instance_part(prompt);
        let lines = evidence_lines(instance);
        if instance.contains("Your output is: Sentences.") {
            let claim = instance["Claim: ".len()..].lines().next().unwrap_or("");
            let claim_words = content_words(claim);
            return lines
                .iter()
                .map(|l| strip_number(l))
                .filter(|t| !t.contains(DISTRACTOR_MARKER))
                .filter(|t| content_words(t).intersection(&claim_words).count() >= 2)
                .collect::<Vec<_>>()
                .join("\n");
        }
        if instance.contains("Your output is: Label; Explanation.") {
            let texts: Vec<&str> = lines.iter().map(|l| strip_number(l)).collect();
            if let Some(rumor) = texts.iter().find(|t| t.contains(DISTRACTOR_MARKER)) {
                let label = stance(rumor).unwrap_or("Uncertain");
                return format!("{label}; A forum post settles the question.");
            }
            return match texts.iter().find_map(|t| stance(t)) {
                Some(label) => format!("{label}; The archive record addresses the claim directly."),
                None => "Uncertain; None of the evidence addresses the claim.".into(),
            };
        }
        "Uncertain; Evidence: none at hand. Explanation: I cannot verify this from memory.".into()
    }
}

impl LlmBackend for ScriptedLlm {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        Ok(Self::answer(request.prompt()))
    }
}

// ---------------------------------------------------------------------------
// Lookup embedder

/// Returns a fixed vector per text; unknown texts are an error.
#[derive(Debug, Clone, Default)]
pub struct MapEmbedder {
    pub vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingBackend for MapEmbedder {
    fn model_name(&self) -> &str {
        "map"
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        texts
            .iter()
            .map(|t| {
                self.vectors
                    .get(t)
                    .cloned()
                    .ok_or_else(|| BackendError::Decode(format!("no vector for {t:?}")))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_balanced() {
        let corpus = SyntheticCorpus::new(30);
        for label in Label::ALL {
            let of_label: Vec<_> = corpus.claims.iter().filter(|c| c.record.gold == label).collect();
            assert_eq!(of_label.len(), 10);
        }
        assert_eq!(corpus.claims.iter().filter(|c| c.has_distractor).count(), 10);
        let mut texts: Vec<_> = corpus.claims.iter().map(|c| c.record.claim.clone()).collect();
        texts.sort();
        texts.dedup();
        assert_eq!(texts.len(), 30);
    }

    #[test]
    fn scripted_filter_drops_distractor() {
        let prompt = format!(
            "Claim: Aldmere bridge\nEvidence:\n1. Aldmere bridge confirmed\n2. An {DISTRACTOR_MARKER} about the Aldmere bridge\n3. Aldmere weather\nYour output is: Sentences."
        );
        assert_eq!(ScriptedLlm::answer(&prompt), "Aldmere bridge confirmed");
    }

    #[test]
    fn scripted_verdict_follows_distractor() {
        let prompt = format!(
            "Claim: x\nEvidence:\nevidence1: a confirms b\nevidence2: An {DISTRACTOR_MARKER} refutes it\nYour output is: Label; Explanation."
        );
        assert!(ScriptedLlm::answer(&prompt).starts_with("False;"));
    }
}
