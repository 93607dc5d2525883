//! Noun and noun-chunk annotation.
//!
//! Two backends: a built-in heuristic that needs nothing, and a client for an
//! external tagger process speaking line-delimited JSON on stdin/stdout:
//!
//! ```text
//! -> {"id":"7","text":"Paris is in France"}
//! <- {"id":"7","nouns":["Paris","France"],"noun_chunks":["Paris","France"]}
//! ```
//!
//! Malformed requests get `{"id":null,"error":"..."}`. Lines without an `id`
//! (a version header, for instance) are ignored by the client.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use tracing::debug;

use crate::error::TaggerError;

/// Raw annotation as produced by a tagger, before normalization.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tagging {
    #[serde(default)]
    pub nouns: Vec<String>,
    #[serde(default)]
    pub noun_chunks: Vec<String>,
}

pub trait TaggerBackend: Send + Sync {
    fn tag(&self, text: &str) -> Result<Tagging, TaggerError>;
}

impl<T: TaggerBackend + ?Sized> TaggerBackend for &T {
    fn tag(&self, text: &str) -> Result<Tagging, TaggerError> {
        (**self).tag(text)
    }
}

impl<T: TaggerBackend + ?Sized> TaggerBackend for Box<T> {
    fn tag(&self, text: &str) -> Result<Tagging, TaggerError> {
        (**self).tag(text)
    }
}

// ---------------------------------------------------------------------------
// Heuristic extractor

const STOPWORDS: &[&str] = &[
    "a", "about", "above", "actually", "after", "again", "against", "all", "already", "also",
    "always", "am", "among", "an", "and", "any", "are", "around", "as", "at", "be", "because",
    "been", "before", "being", "below", "between", "both", "but", "by", "can", "cannot", "could",
    "currently", "did", "do", "does", "doing", "down", "during", "each", "either", "ever", "every",
    "few", "for", "from", "further", "had", "has", "have", "having", "he", "her", "here", "hers",
    "herself", "him", "himself", "his", "how", "however", "i", "if", "in", "into", "is", "it",
    "its", "itself", "just", "least", "less", "many", "may", "me", "might", "more", "most",
    "much", "must", "my", "neither", "never", "no", "nor", "not", "now", "of", "off", "often",
    "on", "once", "only", "onto", "or", "other", "our", "ours", "out", "over", "own", "per",
    "rather", "really", "recently", "same", "she", "should", "since", "so", "some", "still",
    "such", "than", "that", "the", "their", "theirs", "them", "themselves", "then", "there",
    "these", "they", "this", "those", "though", "through", "to", "too", "toward", "towards",
    "under", "until", "up", "upon", "us", "very", "via", "was", "we", "were", "what", "when",
    "where", "whether", "which", "while", "who", "whom", "whose", "why", "will", "with",
    "within", "without", "would", "yet", "you", "your", "yours", "s", "t", "shall", "one's",
];

/// Frequent verb forms that the `-ed` rule does not catch.
const VERBS: &[&str] = &[
    "ask", "became", "become", "becomes", "began", "begin", "born", "bought", "break", "bring",
    "brought", "build", "built", "buy", "call", "came", "come", "comes", "die", "dies", "do",
    "drew", "eat", "fell", "find", "follow", "found", "gave", "get", "gets", "give", "gives",
    "go", "goes", "gone", "got", "grew", "grow", "held", "help", "hold", "holds", "keep", "kept",
    "knew", "know", "known", "lead", "leads", "led", "leave", "left", "let", "lie", "lies",
    "live", "lives", "look", "lost", "made", "make", "makes", "meet", "met", "run", "runs",
    "ran", "said", "sang", "saw", "say", "says", "see", "seen", "sell", "sold", "send", "sent",
    "show", "shown", "sing", "stand", "stop", "take", "taken", "takes", "tell", "thought",
    "told", "took", "try", "use", "wait", "want", "went", "win", "wins", "won", "wrote",
    "write", "writes", "written",
];

struct Word<'a> {
    text: &'a str,
    start: usize,
    end: usize,
    /// Punctuation separates this word from the previous one.
    after_break: bool,
}

fn words(text: &str) -> Vec<Word<'_>> {
    let mut out = Vec::new();
    let mut pending_break = false;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if c.is_alphanumeric() {
            let start = i;
            let mut end = i + c.len_utf8();
            while let Some(&(j, d)) = chars.peek() {
                let joiner = matches!(d, '\'' | '-' | '\u{2019}');
                if d.is_alphanumeric() {
                    end = j + d.len_utf8();
                    chars.next();
                } else if joiner {
                    // Only an internal joiner: must be followed by a letter/digit.
                    let mut look = chars.clone();
                    look.next();
                    match look.peek() {
                        Some(&(_, e)) if e.is_alphanumeric() => {
                            chars.next();
                        }
                        _ => break,
                    }
                } else {
                    break;
                }
            }
            out.push(Word {
                text: &text[start..end],
                start,
                end,
                after_break: pending_break,
            });
            pending_break = false;
        } else if !c.is_whitespace() {
            pending_break = true;
        }
    }
    out
}

fn is_boundary(word: &str) -> bool {
    let lower = word.to_lowercase();
    let lower = lower.trim_end_matches("'s").trim_end_matches("\u{2019}s");
    if STOPWORDS.contains(&lower) || VERBS.contains(&lower) {
        return true;
    }
    let capitalized = word.chars().next().is_some_and(char::is_uppercase);
    // Lowercase past-tense / participle forms ("caused", "founded").
    !capitalized && lower.len() > 4 && lower.ends_with("ed")
}

fn is_numeric(word: &str) -> bool {
    word.chars().all(|c| c.is_ascii_digit() || c == '-' || c == '\'')
}

/// Capitalized-token and stopword-boundary chunking.
///
/// Chunks are maximal runs of words containing no stopword, common verb,
/// lowercase `-ed` form or punctuation. Nouns are the capitalized words and
/// the last word of each chunk.
pub fn heuristic_tagging(text: &str) -> Tagging {
    let words = words(text);
    let mut chunks: Vec<(usize, usize)> = Vec::new();
    let mut current: Option<(usize, usize)> = None;
    for (i, w) in words.iter().enumerate() {
        let boundary = is_boundary(w.text);
        if boundary || w.after_break {
            if let Some(c) = current.take() {
                chunks.push(c);
            }
        }
        if !boundary {
            current = Some(match current {
                Some((s, _)) => (s, i),
                None => (i, i),
            });
        }
    }
    if let Some(c) = current {
        chunks.push(c);
    }
    chunks.retain(|&(s, e)| !words[s..=e].iter().all(|w| is_numeric(w.text)));

    let mut nouns = Vec::new();
    for &(s, e) in &chunks {
        for (i, w) in words.iter().enumerate().take(e + 1).skip(s) {
            let capitalized = w.text.chars().next().is_some_and(char::is_uppercase);
            if (capitalized || i == e) && !is_numeric(w.text) {
                nouns.push(w.text.to_string());
            }
        }
    }
    let noun_chunks = chunks
        .iter()
        .map(|&(s, e)| text[words[s].start..words[e].end].to_string())
        .collect();
    Tagging { nouns, noun_chunks }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct HeuristicTagger;

impl TaggerBackend for HeuristicTagger {
    fn tag(&self, text: &str) -> Result<Tagging, TaggerError> {
        Ok(heuristic_tagging(text))
    }
}

// ---------------------------------------------------------------------------
// Sidecar client

#[derive(Deserialize)]
struct TagResponse {
    id: Option<String>,
    #[serde(default)]
    nouns: Vec<String>,
    #[serde(default)]
    noun_chunks: Vec<String>,
    #[serde(default)]
    error: Option<String>,
}

struct SidecarState {
    child: Child,
    stdin: Option<ChildStdin>,
    responses: Receiver<Value>,
    stash: HashMap<String, TagResponse>,
    next_id: u64,
}

/// Client for a tagger child process. One request is in flight at a time;
/// responses for other ids are stashed, and a response that does not arrive
/// within the timeout yields [`TaggerError::Unavailable`].
pub struct SidecarTagger {
    state: Mutex<SidecarState>,
    timeout: Duration,
}

impl SidecarTagger {
    /// Launches `command` through `sh -c`.
    pub fn spawn(command: &str, timeout: Duration) -> Result<Self, TaggerError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| TaggerError::Unavailable(format!("cannot start {command:?}: {e}")))?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().expect("stdout is piped");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<Value>(&line) {
                    Ok(v) => {
                        if tx.send(v).is_err() {
                            break;
                        }
                    }
                    Err(e) => debug!(error = %e, "ignoring non-JSON tagger line"),
                }
            }
        });
        Ok(Self {
            state: Mutex::new(SidecarState {
                child,
                stdin,
                responses: rx,
                stash: HashMap::new(),
                next_id: 0,
            }),
            timeout,
        })
    }
}

impl TaggerBackend for SidecarTagger {
    fn tag(&self, text: &str) -> Result<Tagging, TaggerError> {
        let mut state = self
            .state
            .lock()
            .map_err(|_| TaggerError::Unavailable("tagger client poisoned".into()))?;
        state.next_id += 1;
        let id = state.next_id.to_string();
        let line = serde_json::json!({"id": id, "text": text}).to_string();
        let stdin = state
            .stdin
            .as_mut()
            .ok_or_else(|| TaggerError::Unavailable("tagger stdin closed".into()))?;
        writeln!(stdin, "{line}")
            .and_then(|_| stdin.flush())
            .map_err(|e| TaggerError::Unavailable(format!("write failed: {e}")))?;

        let deadline = Instant::now() + self.timeout;
        loop {
            if let Some(resp) = state.stash.remove(&id) {
                return into_tagging(resp);
            }
            let remaining = deadline.saturating_duration_since(Instant::now());
            let value = match state.responses.recv_timeout(remaining) {
                Ok(v) => v,
                Err(RecvTimeoutError::Timeout) => {
                    return Err(TaggerError::Unavailable(format!(
                        "no response for request {id} within {:?}",
                        self.timeout
                    )))
                }
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(TaggerError::Unavailable("tagger process exited".into()))
                }
            };
            let Ok(resp) = serde_json::from_value::<TagResponse>(value) else {
                continue;
            };
            match resp.id.clone() {
                Some(rid) if rid == id => return into_tagging(resp),
                Some(rid) => {
                    state.stash.insert(rid, resp);
                }
                None => {
                    if let Some(err) = resp.error {
                        debug!(%err, "tagger reported an error without id");
                    }
                }
            }
        }
    }
}

fn into_tagging(resp: TagResponse) -> Result<Tagging, TaggerError> {
    match resp.error {
        Some(err) => Err(TaggerError::Unavailable(err)),
        None => Ok(Tagging {
            nouns: resp.nouns,
            noun_chunks: resp.noun_chunks,
        }),
    }
}

impl Drop for SidecarTagger {
    fn drop(&mut self) {
        if let Ok(state) = self.state.get_mut() {
            // Closing stdin asks the sidecar to exit.
            state.stdin.take();
            let deadline = Instant::now() + Duration::from_secs(2);
            loop {
                match state.child.try_wait() {
                    Ok(Some(_)) => break,
                    Ok(None) if Instant::now() < deadline => {
                        std::thread::sleep(Duration::from_millis(20))
                    }
                    _ => {
                        let _ = state.child.kill();
                        let _ = state.child.wait();
                        break;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn contains(list: &[String], s: &str) -> bool {
        list.iter().any(|x| x == s)
    }

    #[test]
    fn heuristic_on_fish_death_claim() {
        let t = heuristic_tagging(
            "Mass fish death in Malaysia caused by algal bloom, not Fukushima wastewater.",
        );
        for chunk in ["Malaysia", "algal bloom", "Fukushima wastewater"] {
            assert!(contains(&t.noun_chunks, chunk), "{chunk} missing from {t:?}");
        }
        assert!(!contains(&t.noun_chunks, "caused"));
    }

    #[test]
    fn heuristic_finds_proper_nouns() {
        let t = heuristic_tagging("Paris is in France");
        assert!(contains(&t.nouns, "Paris"));
        assert!(contains(&t.nouns, "France"));
    }

    #[test]
    fn imperative_has_no_nominal_content() {
        assert_eq!(heuristic_tagging("Run!"), Tagging::default());
        assert_eq!(heuristic_tagging(""), Tagging::default());
    }

    #[test]
    fn punctuation_and_numbers_split_chunks() {
        let t = heuristic_tagging("Tokyo, Japan hosted the 2020 Olympics.");
        assert!(contains(&t.noun_chunks, "Tokyo"));
        assert!(contains(&t.noun_chunks, "Japan"));
        assert!(contains(&t.noun_chunks, "2020 Olympics"));
        assert!(!contains(&t.nouns, "2020"));
    }

    #[test]
    fn internal_apostrophes_and_hyphens_stay_in_words() {
        let t = heuristic_tagging("O'Neill wrote a well-known play.");
        assert!(contains(&t.noun_chunks, "O'Neill"));
        assert!(contains(&t.noun_chunks, "well-known play"));
    }
}
