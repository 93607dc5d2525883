//! Claim-relevant evidence selection.
//!
//! Two stages: the LLM lists the pool sentences it considers relevant to the
//! claim (it may also add sentences of its own), then every pool item is
//! scored by cosine similarity against those sentences and the best `k`
//! items are kept.

use serde::{Deserialize, Serialize};

use crate::backend::{ChatMessage, CompletionRequest, EmbeddingBackend, LlmBackend};
use crate::error::SelectionError;
use crate::prompts::{fill, one_line, with_exemplar, FILTER_TEMPLATE};
use crate::retrieval::EvidenceItem;
use crate::types::{Aggregation, Claim};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, SelectionError> {
        if values.is_empty() {
            return Err(SelectionError::DimensionMismatch {
                expected: 1,
                found: 0,
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SelectionError::NonFinite);
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, SelectionError> {
    if a.dim() != b.dim() {
        return Err(SelectionError::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    let na = a.values.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.values.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(SelectionError::ZeroVector);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Sentences returned by the LLM filter, traced back to the pool.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilteredEvidence {
    pub sentences: Vec<String>,
    /// Id of the pool item each sentence was found in.
    pub matched: Vec<Option<String>>,
    /// True when the sentence does not occur in the pool.
    pub model_introduced: Vec<bool>,
}

impl FilteredEvidence {
    /// Treats every pool item as retained; used when the filter yields nothing.
    pub fn whole_pool(pool: &[EvidenceItem]) -> Self {
        Self {
            sentences: pool.iter().map(|i| i.text.clone()).collect(),
            matched: pool.iter().map(|i| Some(i.id.clone())).collect(),
            model_introduced: vec![false; pool.len()],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

/// Model name and sampling temperature for one LLM call.
#[derive(Debug, Clone, PartialEq)]
pub struct LlmParams {
    pub model: String,
    pub temperature: f64,
}

impl LlmParams {
    pub fn request(&self, prompt: String) -> CompletionRequest {
        CompletionRequest {
            model: self.model.clone(),
            temperature: self.temperature,
            messages: vec![ChatMessage::user(prompt)],
        }
    }
}

pub fn render_filter_prompt(claim: &Claim, pool: &[EvidenceItem], exemplar: &str) -> String {
    let evidence = pool
        .iter()
        .enumerate()
        .map(|(i, item)| format!("{}. {}", i + 1, one_line(&item.text)))
        .collect::<Vec<_>>()
        .join("\n");
    let instance = fill(
        FILTER_TEMPLATE,
        &[("claim", claim.text.as_str()), ("evidence", &evidence)],
    );
    with_exemplar(exemplar, instance)
}

fn strip_list_marker(line: &str) -> &str {
    let line = line.trim();
    let line = line.trim_start_matches(['-', '*', '•', '+']).trim_start();
    let digits = line.chars().take_while(char::is_ascii_digit).count();
    let line = if digits > 0 {
        let rest = &line[digits..];
        match rest.chars().next() {
            Some('.' | ')' | ':') => rest[1..].trim_start(),
            _ => line,
        }
    } else {
        line
    };
    line.trim_matches(['"', '\u{201c}', '\u{201d}']).trim()
}

/// Splits a filter completion into sentences, one per list item or line.
pub fn parse_filter_output(raw: &str) -> Vec<String> {
    raw.lines()
        .filter_map(|line| {
            let mut line = line.trim();
            if let Some(rest) = strip_prefix_ci(line, "sentences:") {
                line = rest.trim();
            }
            if line.eq_ignore_ascii_case("sentences") || line.chars().all(|c| "-*`#=".contains(c)) {
                return None;
            }
            let text = strip_list_marker(line);
            (!text.is_empty()).then(|| text.to_string())
        })
        .collect()
}

fn strip_prefix_ci<'a>(s: &'a str, prefix: &str) -> Option<&'a str> {
    (s.len() >= prefix.len() && s.is_char_boundary(prefix.len()) && s[..prefix.len()].eq_ignore_ascii_case(prefix))
        .then(|| &s[prefix.len()..])
}

fn normalize_for_match(text: &str) -> String {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Links each sentence to the first pool item whose normalized text contains it.
pub fn trace_sentences(sentences: Vec<String>, pool: &[EvidenceItem]) -> FilteredEvidence {
    let normalized_pool: Vec<String> = pool.iter().map(|i| normalize_for_match(&i.text)).collect();
    let matched: Vec<Option<String>> = sentences
        .iter()
        .map(|s| {
            let needle = normalize_for_match(s);
            if needle.is_empty() {
                return None;
            }
            normalized_pool
                .iter()
                .position(|hay| hay.contains(&needle))
                .map(|i| pool[i].id.clone())
        })
        .collect();
    let model_introduced = matched.iter().map(Option::is_none).collect();
    FilteredEvidence {
        sentences,
        matched,
        model_introduced,
    }
}

pub fn llm_filter(
    claim: &Claim,
    pool: &[EvidenceItem],
    llm: &dyn LlmBackend,
    params: &LlmParams,
    exemplar: &str,
) -> Result<FilteredEvidence, SelectionError> {
    if pool.is_empty() {
        return Err(SelectionError::EmptyInput("candidate pool"));
    }
    let prompt = render_filter_prompt(claim, pool, exemplar);
    let raw = llm.complete(&params.request(prompt))?;
    let sentences = parse_filter_output(&raw);
    if sentences.is_empty() {
        return Err(SelectionError::EmptyFilter);
    }
    Ok(trace_sentences(sentences, pool))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredEvidence {
    pub item: EvidenceItem,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedEvidence {
    /// Best first.
    pub items: Vec<ScoredEvidence>,
    pub k: usize,
}

fn checked_vectors(
    raw: Vec<Vec<f64>>,
    expected_len: usize,
) -> Result<Vec<EmbeddingVector>, SelectionError> {
    if raw.len() != expected_len {
        return Err(SelectionError::CountMismatch {
            expected: expected_len,
            found: raw.len(),
        });
    }
    let vectors = raw
        .into_iter()
        .map(EmbeddingVector::new)
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(first) = vectors.first() {
        if let Some(bad) = vectors.iter().find(|v| v.dim() != first.dim()) {
            return Err(SelectionError::DimensionMismatch {
                expected: first.dim(),
                found: bad.dim(),
            });
        }
    }
    Ok(vectors)
}

/// Scores every pool item against the filtered sentences and keeps the best `k`.
///
/// Ties on score go to the earlier pool position, then the smaller id.
pub fn select_top_k(
    filtered: &FilteredEvidence,
    pool: &[EvidenceItem],
    embedder: &dyn EmbeddingBackend,
    k: usize,
    agg: Aggregation,
) -> Result<SelectedEvidence, SelectionError> {
    if pool.is_empty() {
        return Err(SelectionError::EmptyInput("candidate pool"));
    }
    if filtered.is_empty() {
        return Err(SelectionError::EmptyFilter);
    }
    assert!(k >= 1, "k must be positive");

    let mut texts = filtered.sentences.clone();
    texts.extend(pool.iter().map(|i| i.text.clone()));
    let vectors = checked_vectors(embedder.embed(&texts)?, texts.len())?;
    let (sentence_vecs, pool_vecs) = vectors.split_at(filtered.sentences.len());

    let mut scored: Vec<(usize, f64)> = Vec::with_capacity(pool.len());
    for (pos, candidate) in pool_vecs.iter().enumerate() {
        let sims = sentence_vecs
            .iter()
            .map(|s| cosine(s, candidate))
            .collect::<Result<Vec<f64>, _>>()?;
        let score = match agg {
            Aggregation::Max => sims.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Aggregation::Mean => sims.iter().sum::<f64>() / sims.len() as f64,
        };
        scored.push((pos, score));
    }
    scored.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then(a.0.cmp(&b.0))
            .then_with(|| pool[a.0].id.cmp(&pool[b.0].id))
    });
    let items = scored
        .into_iter()
        .take(k)
        .map(|(pos, score)| {
            let mut item = pool[pos].clone();
            item.embedding = Some(pool_vecs[pos].clone());
            ScoredEvidence { item, score }
        })
        .collect();
    Ok(SelectedEvidence { items, k })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::HashingEmbedder;
    use crate::error::BackendError;
    use crate::query::QueryKind;
    use crate::retrieval::Provenance;
    use proptest::prelude::*;

    fn v(values: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(values.to_vec()).unwrap()
    }

    fn item(i: usize, text: &str) -> EvidenceItem {
        EvidenceItem {
            id: format!("id{i:03}"),
            text: text.to_string(),
            provenance: Provenance {
                url: format!("https://e.com/{i}"),
                rank: i % 10 + 1,
                source_kind: QueryKind::WholeClaim,
            },
            embedding: None,
        }
    }

    struct Scripted(&'static str);

    impl LlmBackend for Scripted {
        fn complete(&self, _r: &CompletionRequest) -> Result<String, BackendError> {
            Ok(self.0.to_string())
        }
    }

    fn params() -> LlmParams {
        LlmParams {
            model: "m".into(),
            temperature: 0.0,
        }
    }

    #[test]
    fn cosine_examples() {
        let a = v(&[0.3, -1.2, 4.0]);
        assert!((cosine(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(cosine(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        // 32 / sqrt(14 * 77), evaluated at 50 digits with mpmath.
        let expected = 0.974_631_846_197_076_3;
        assert!((cosine(&v(&[1.0, 2.0, 3.0]), &v(&[4.0, 5.0, 6.0])).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(
            cosine(&v(&[1.0]), &v(&[1.0, 2.0])),
            Err(SelectionError::DimensionMismatch { expected: 1, found: 2 })
        ));
        assert!(matches!(
            cosine(&v(&[0.0, 0.0]), &v(&[1.0, 2.0])),
            Err(SelectionError::ZeroVector)
        ));
        assert!(EmbeddingVector::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn filter_traces_pool_sentences() {
        let pool = vec![
            item(0, "Red tide: The neurotoxins produced by harmful algae blooms can cause massive fish kills"),
            item(1, "Fish news: Red tide effects on animals were reported in March"),
        ];
        let llm = Scripted("1. algae blooms can cause massive fish kills\n2. red tide effects on animals");
        let claim = Claim::new("fish died").unwrap();
        let f = llm_filter(&claim, &pool, &llm, &params(), "").unwrap();
        assert_eq!(f.sentences.len(), 2);
        assert_eq!(f.matched, vec![Some("id000".into()), Some("id001".into())]);
        assert_eq!(f.model_introduced, vec![false, false]);
    }

    #[test]
    fn filter_marks_model_introduced_sentences() {
        let pool = vec![item(0, "A: b c")];
        let llm = Scripted("Sentences:\n- Something the model knows.\n- b c");
        let f = llm_filter(&Claim::new("x").unwrap(), &pool, &llm, &params(), "").unwrap();
        assert_eq!(f.sentences, vec!["Something the model knows.", "b c"]);
        assert_eq!(f.model_introduced, vec![true, false]);
        assert_eq!(f.matched[0], None);
    }

    #[test]
    fn empty_filter_output_is_an_error() {
        let pool = vec![item(0, "A")];
        let err = llm_filter(&Claim::new("x").unwrap(), &pool, &Scripted(""), &params(), "");
        assert!(matches!(err, Err(SelectionError::EmptyFilter)));
        let err = llm_filter(&Claim::new("x").unwrap(), &pool, &Scripted("Sentences:\n\n"), &params(), "");
        assert!(matches!(err, Err(SelectionError::EmptyFilter)));
    }

    #[test]
    fn list_markers_are_stripped() {
        assert_eq!(
            parse_filter_output("1) one\n  2. two \n* three\n\"four\"\n10: ten\n---"),
            vec!["one", "two", "three", "four", "ten"]
        );
        assert_eq!(parse_filter_output("2020 was a year"), vec!["2020 was a year"]);
    }

    #[test]
    fn filter_prompt_numbers_pool() {
        let pool = vec![item(0, "first\nline"), item(1, "second")];
        let p = render_filter_prompt(&Claim::new("C").unwrap(), &pool, "");
        assert!(p.contains("Claim: C\n"));
        assert!(p.contains("1. first line\n2. second\n"));
    }

    #[test]
    fn k_larger_than_pool_returns_everything_sorted() {
        let pool: Vec<_> = ["alpha beta", "gamma", "alpha"].iter().enumerate().map(|(i, t)| item(i, t)).collect();
        let filtered = trace_sentences(vec!["alpha".into()], &pool);
        let sel = select_top_k(&filtered, &pool, &HashingEmbedder::new(64), 10, Aggregation::Max).unwrap();
        assert_eq!(sel.items.len(), 3);
        assert_eq!(sel.items[0].item.id, "id002");
        assert!((sel.items[0].score - 1.0).abs() < 1e-12);
        assert!(sel.items.windows(2).all(|w| w[0].score >= w[1].score));
        assert!(sel.items.iter().all(|s| s.item.embedding.is_some()));
    }

    struct Ragged;

    impl EmbeddingBackend for Ragged {
        fn model_name(&self) -> &str {
            "ragged"
        }
        fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
            Ok(texts.iter().enumerate().map(|(i, _)| vec![1.0; 2 + i % 2]).collect())
        }
    }

    #[test]
    fn dimension_mismatch_is_hard_error() {
        let pool = vec![item(0, "a"), item(1, "b")];
        let filtered = trace_sentences(vec!["a".into()], &pool);
        assert!(matches!(
            select_top_k(&filtered, &pool, &Ragged, 5, Aggregation::Max),
            Err(SelectionError::DimensionMismatch { .. })
        ));
    }

    fn pool_from(words: &[String]) -> Vec<EvidenceItem> {
        words.iter().enumerate().map(|(i, w)| item(i, w)).collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn cosine_is_symmetric(a in proptest::collection::vec(-10.0f64..10.0, 8), b in proptest::collection::vec(-10.0f64..10.0, 8)) {
            prop_assume!(a.iter().any(|x| *x != 0.0) && b.iter().any(|x| *x != 0.0));
            let (a, b) = (v(&a), v(&b));
            prop_assert!((cosine(&a, &b).unwrap() - cosine(&b, &a).unwrap()).abs() <= 1e-12);
        }

        #[test]
        fn selection_is_a_subset_of_the_pool(
            texts in proptest::collection::vec("[a-e]{1,3}( [a-e]{1,3}){0,3}", 1..15),
            sentences in proptest::collection::vec("[a-e]{1,3}( [a-e]{1,3}){0,2}", 1..4),
            k in 1usize..8,
        ) {
            let pool = pool_from(&texts);
            let filtered = trace_sentences(sentences, &pool);
            let sel = select_top_k(&filtered, &pool, &HashingEmbedder::new(16), k, Aggregation::Mean);
            // Hash collisions can cancel a vector to zero; that is a defined error.
            if let Ok(sel) = sel {
                prop_assert_eq!(sel.items.len(), k.min(pool.len()));
                for s in &sel.items {
                    prop_assert!(pool.iter().any(|p| p.id == s.item.id));
                    prop_assert!((-1.0..=1.0).contains(&s.score));
                }
            }
        }

        #[test]
        fn max_aggregation_is_monotone(
            texts in proptest::collection::vec("[a-h]{1,3}( [a-h]{1,3}){0,3}", 1..12),
            sentences in proptest::collection::vec("[a-h]{1,3}( [a-h]{1,3}){0,2}", 1..4),
            extra in "[a-h]{1,3}( [a-h]{1,3}){0,2}",
        ) {
            let pool = pool_from(&texts);
            let emb = HashingEmbedder::new(32);
            let before = trace_sentences(sentences.clone(), &pool);
            let mut more = sentences;
            more.push(extra);
            let after = trace_sentences(more, &pool);
            let n = pool.len();
            if let (Ok(b), Ok(a)) = (
                select_top_k(&before, &pool, &emb, n, Aggregation::Max),
                select_top_k(&after, &pool, &emb, n, Aggregation::Max),
            ) {
                for sb in &b.items {
                    let sa = a.items.iter().find(|x| x.item.id == sb.item.id).unwrap();
                    prop_assert!(sa.score >= sb.score);
                }
            }
        }

        #[test]
        fn permuting_the_pool_keeps_scores(
            texts in proptest::collection::vec("[a-z]{2,6}( [a-z]{2,6}){1,4}", 2..12),
            rot in 0usize..12,
        ) {
            let pool = pool_from(&texts);
            let mut rotated = pool.clone();
            let r = rot % rotated.len();
            rotated.rotate_left(r);
            let emb = HashingEmbedder::new(64);
            let filtered = trace_sentences(vec![texts[0].clone()], &pool);
            if let (Ok(a), Ok(b)) = (
                select_top_k(&filtered, &pool, &emb, pool.len(), Aggregation::Max),
                select_top_k(&filtered, &rotated, &emb, pool.len(), Aggregation::Max),
            ) {
                let sa: Vec<f64> = a.items.iter().map(|s| s.score).collect();
                let sb: Vec<f64> = b.items.iter().map(|s| s.score).collect();
                prop_assert_eq!(sa, sb);
            }
        }
    }
}
