//! Pluggable search, chat-completion and embedding backends.
//!
//! Every backend is a blocking, `Send + Sync` client so claims can be
//! checked from several threads at once. Wrappers compose:
//! `Cached<Counting<HttpLlm>>` replays from disk, counts real calls, and
//! only then goes to the network.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tracing::{debug, warn};

use crate::error::BackendError;
use crate::store::{cache_key, Cache, Namespace};

/// One organic result as returned by the search API.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchItem {
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub link: String,
    #[serde(default)]
    pub snippet: String,
}

/// The item-list document shared by the live API, fixtures and the cache.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SearchPage {
    #[serde(default)]
    pub items: Vec<SearchItem>,
}

pub trait SearchBackend: Send + Sync {
    /// Returns at most `limit` items in rank order.
    fn fetch(&self, query: &str, limit: usize) -> Result<Vec<SearchItem>, BackendError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model: String,
    pub temperature: f64,
    pub messages: Vec<ChatMessage>,
}

impl CompletionRequest {
    /// Text of the last message; scripted backends key on it.
    pub fn prompt(&self) -> &str {
        self.messages.last().map(|m| m.content.as_str()).unwrap_or("")
    }
}

pub trait LlmBackend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError>;
}

pub trait EmbeddingBackend: Send + Sync {
    /// Model identity; part of the embedding cache key.
    fn model_name(&self) -> &str;

    /// One vector per input text, in input order.
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError>;
}

macro_rules! forward_impls {
    ($($wrapper:ty),*) => {$(
        impl<B: SearchBackend + ?Sized> SearchBackend for $wrapper {
            fn fetch(&self, query: &str, limit: usize) -> Result<Vec<SearchItem>, BackendError> {
                (**self).fetch(query, limit)
            }
        }
        impl<B: LlmBackend + ?Sized> LlmBackend for $wrapper {
            fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
                (**self).complete(request)
            }
        }
        impl<B: EmbeddingBackend + ?Sized> EmbeddingBackend for $wrapper {
            fn model_name(&self) -> &str {
                (**self).model_name()
            }
            fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
                (**self).embed(texts)
            }
        }
    )*};
}

forward_impls!(&B, Box<B>, Arc<B>);

// ---------------------------------------------------------------------------
// HTTP clients

/// Bounded retry with exponential backoff.
#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

enum Attempt {
    Done(Result<String, BackendError>),
    Retry(BackendError),
}

fn classify(result: reqwest::Result<reqwest::blocking::Response>) -> Attempt {
    let response = match result {
        Ok(r) => r,
        Err(e) => return Attempt::Retry(BackendError::Transport(e.to_string())),
    };
    let status = response.status();
    let body = match response.text() {
        Ok(b) => b,
        Err(e) => return Attempt::Retry(BackendError::Transport(e.to_string())),
    };
    if status.is_success() {
        return Attempt::Done(Ok(body));
    }
    let code = status.as_u16();
    if code == 429 {
        return Attempt::Retry(BackendError::QuotaExceeded(body));
    }
    // Google reports exhausted daily quota as 403 with a reason string.
    if code == 403 && (body.contains("rateLimitExceeded") || body.contains("dailyLimitExceeded")) {
        return Attempt::Done(Err(BackendError::QuotaExceeded(body)));
    }
    if status.is_server_error() {
        return Attempt::Retry(BackendError::Http { status: code, body });
    }
    Attempt::Done(Err(BackendError::Http { status: code, body }))
}

fn send_with_retry(
    policy: RetryPolicy,
    what: &str,
    mut build: impl FnMut() -> reqwest::blocking::RequestBuilder,
) -> Result<String, BackendError> {
    let attempts = policy.attempts.max(1);
    let mut last = None;
    for attempt in 0..attempts {
        if attempt > 0 {
            let delay = policy.base_delay * 2u32.pow(attempt - 1);
            debug!(what, attempt, ?delay, "retrying");
            std::thread::sleep(delay);
        }
        match classify(build().send()) {
            Attempt::Done(result) => return result,
            Attempt::Retry(err) => {
                warn!(what, attempt, error = %err, "request failed");
                last = Some(err);
            }
        }
    }
    Err(last.expect("at least one attempt"))
}

fn http_client(timeout: Duration) -> Result<reqwest::blocking::Client, BackendError> {
    reqwest::blocking::Client::builder()
        .timeout(timeout)
        .build()
        .map_err(|e| BackendError::Transport(format!("cannot build HTTP client: {e}")))
}

/// Custom Search JSON API client (`GET ?key=&cx=&q=&num=`).
pub struct LiveSearch {
    client: reqwest::blocking::Client,
    endpoint: String,
    api_key: String,
    engine_id: String,
    retry: RetryPolicy,
}

impl LiveSearch {
    /// The API refuses pages larger than this.
    pub const MAX_PAGE: usize = 10;

    pub fn new(
        endpoint: impl Into<String>,
        api_key: impl Into<String>,
        engine_id: impl Into<String>,
    ) -> Result<Self, BackendError> {
        Ok(Self {
            client: http_client(Duration::from_secs(30))?,
            endpoint: endpoint.into(),
            api_key: api_key.into(),
            engine_id: engine_id.into(),
            retry: RetryPolicy::default(),
        })
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }
}

impl SearchBackend for LiveSearch {
    fn fetch(&self, query: &str, limit: usize) -> Result<Vec<SearchItem>, BackendError> {
        let num = limit.clamp(1, Self::MAX_PAGE).to_string();
        let body = send_with_retry(self.retry, "search", || {
            self.client.get(&self.endpoint).query(&[
                ("key", self.api_key.as_str()),
                ("cx", self.engine_id.as_str()),
                ("q", query),
                ("num", num.as_str()),
            ])
        })?;
        let page: SearchPage =
            serde_json::from_str(&body).map_err(|e| BackendError::Decode(e.to_string()))?;
        Ok(page.items.into_iter().take(limit).collect())
    }
}

/// OpenAI-compatible `/chat/completions` client.
pub struct HttpLlm {
    client: reqwest::blocking::Client,
    base_url: String,
    api_key: Option<String>,
    retry: RetryPolicy,
}

impl HttpLlm {
    pub fn new(
        base_url: impl Into<String>,
        api_key: Option<String>,
        timeout: Duration,
    ) -> Result<Self, BackendError> {
        Ok(Self {
            client: http_client(timeout)?,
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: api_key.filter(|k| !k.is_empty()),
            retry: RetryPolicy::default(),
        })
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }
}

fn with_auth(
    builder: reqwest::blocking::RequestBuilder,
    key: &Option<String>,
) -> reqwest::blocking::RequestBuilder {
    match key {
        Some(k) => builder.bearer_auth(k),
        None => builder,
    }
}

impl LlmBackend for HttpLlm {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let url = format!("{}/chat/completions", self.base_url);
        let body = send_with_retry(self.retry, "llm", || {
            with_auth(self.client.post(&url), &self.api_key).json(request)
        })?;
        let value: Value =
            serde_json::from_str(&body).map_err(|e| BackendError::Decode(e.to_string()))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| BackendError::Decode("response has no choices[0].message.content".into()))
    }
}

/// OpenAI-compatible `/embeddings` client.
pub struct HttpEmbedder {
    client: reqwest::blocking::Client,
    base_url: String,
    model: String,
    api_key: Option<String>,
    retry: RetryPolicy,
}

impl HttpEmbedder {
    pub fn new(
        base_url: impl Into<String>,
        model: impl Into<String>,
        api_key: Option<String>,
    ) -> Result<Self, BackendError> {
        Ok(Self {
            client: http_client(Duration::from_secs(60))?,
            base_url: base_url.into().trim_end_matches('/').to_string(),
            model: model.into(),
            api_key: api_key.filter(|k| !k.is_empty()),
            retry: RetryPolicy::default(),
        })
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    #[serde(default)]
    index: Option<usize>,
    embedding: Vec<f64>,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

impl EmbeddingBackend for HttpEmbedder {
    fn model_name(&self) -> &str {
        &self.model
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let url = format!("{}/embeddings", self.base_url);
        let payload = json!({"model": self.model, "input": texts});
        let body = send_with_retry(self.retry, "embedding", || {
            with_auth(self.client.post(&url), &self.api_key).json(&payload)
        })?;
        let mut response: EmbeddingResponse =
            serde_json::from_str(&body).map_err(|e| BackendError::Decode(e.to_string()))?;
        if response.data.len() != texts.len() {
            return Err(BackendError::Decode(format!(
                "{} embeddings for {} inputs",
                response.data.len(),
                texts.len()
            )));
        }
        if response.data.iter().all(|d| d.index.is_some()) {
            response.data.sort_by_key(|d| d.index);
        }
        Ok(response.data.into_iter().map(|d| d.embedding).collect())
    }
}

// ---------------------------------------------------------------------------
// Local backends

/// Serves recorded search responses from a directory.
///
/// A response for query `q` is looked up as `<dir>/<key>.json` and then in
/// cache layout (`<dir>/search/<k[..2]>/<key>`), where
/// `key = cache_key(search, {"q": q})`. A recorded cache directory is
/// therefore a valid fixture directory.
pub struct FixtureSearch {
    dir: std::path::PathBuf,
}

impl FixtureSearch {
    pub fn new(dir: impl Into<std::path::PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn key(query: &str) -> String {
        cache_key(Namespace::Search, &search_request(query))
    }

    /// Writes a fixture file in the flat `<key>.json` layout.
    pub fn write(dir: &std::path::Path, query: &str, page: &SearchPage) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let body = serde_json::to_vec_pretty(page).expect("search pages serialize");
        std::fs::write(dir.join(format!("{}.json", Self::key(query))), body)
    }
}

impl SearchBackend for FixtureSearch {
    fn fetch(&self, query: &str, limit: usize) -> Result<Vec<SearchItem>, BackendError> {
        let key = Self::key(query);
        let flat = self.dir.join(format!("{key}.json"));
        let nested = Cache::new(&self.dir).entry_path(Namespace::Search, &key);
        let bytes = [flat, nested]
            .iter()
            .find_map(|p| std::fs::read(p).ok())
            .ok_or_else(|| BackendError::FixtureNotFound(format!("query {query:?} (key {key})")))?;
        let page: SearchPage =
            serde_json::from_slice(&bytes).map_err(|e| BackendError::Decode(e.to_string()))?;
        Ok(page.items.into_iter().take(limit).collect())
    }
}

/// Backend used under `--offline`: every call is an error.
#[derive(Debug, Clone, Copy, Default)]
pub struct Offline;

impl SearchBackend for Offline {
    fn fetch(&self, _query: &str, _limit: usize) -> Result<Vec<SearchItem>, BackendError> {
        Err(BackendError::Offline("search".into()))
    }
}

impl LlmBackend for Offline {
    fn complete(&self, _request: &CompletionRequest) -> Result<String, BackendError> {
        Err(BackendError::Offline("llm".into()))
    }
}

impl EmbeddingBackend for Offline {
    fn model_name(&self) -> &str {
        "offline"
    }

    fn embed(&self, _texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        Err(BackendError::Offline("embedding".into()))
    }
}

/// Offline stand-in for a named embedding model. Cache keys include the
/// model name, so replaying a recorded run needs the original name.
#[derive(Debug, Clone)]
pub struct OfflineEmbedder {
    pub model: String,
}

impl EmbeddingBackend for OfflineEmbedder {
    fn model_name(&self) -> &str {
        &self.model
    }

    fn embed(&self, _texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        Err(BackendError::Offline(format!("embedding model {}", self.model)))
    }
}

/// Feature-hashed bag-of-words embedder.
///
/// Lowercased alphanumeric tokens are hashed (FNV-1a) to a bucket and a
/// sign. Text with no tokens hashes its raw characters instead, so the
/// vector is never all-zero for non-empty input.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dim: usize,
    name: String,
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self {
            dim,
            name: format!("hashing-{dim}"),
        }
    }

    fn fnv1a(bytes: &[u8]) -> u64 {
        bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
            (h ^ u64::from(*b)).wrapping_mul(0x0000_0100_0000_01b3)
        })
    }

    pub fn embed_one(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        let lower = text.to_lowercase();
        let mut tokens: Vec<&str> = lower
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .collect();
        if tokens.is_empty() && !lower.trim().is_empty() {
            tokens.push(lower.trim());
        }
        for token in tokens {
            let h = Self::fnv1a(token.as_bytes());
            let bucket = (h % self.dim as u64) as usize;
            let sign = if (h >> 63) == 0 { 1.0 } else { -1.0 };
            v[bucket] += sign;
        }
        v
    }
}

impl EmbeddingBackend for HashingEmbedder {
    fn model_name(&self) -> &str {
        &self.name
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

// ---------------------------------------------------------------------------
// Wrappers

/// Counts calls that reach the wrapped backend.
#[derive(Debug, Default)]
pub struct Counting<B> {
    inner: B,
    calls: AtomicUsize,
}

impl<B> Counting<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn tick(&self) {
        self.calls.fetch_add(1, Ordering::SeqCst);
    }
}

impl<B: SearchBackend> SearchBackend for Counting<B> {
    fn fetch(&self, query: &str, limit: usize) -> Result<Vec<SearchItem>, BackendError> {
        self.tick();
        self.inner.fetch(query, limit)
    }
}

impl<B: LlmBackend> LlmBackend for Counting<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        self.tick();
        self.inner.complete(request)
    }
}

impl<B: EmbeddingBackend> EmbeddingBackend for Counting<B> {
    fn model_name(&self) -> &str {
        self.inner.model_name()
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        self.tick();
        self.inner.embed(texts)
    }
}

fn search_request(query: &str) -> Value {
    json!({ "q": query })
}

/// Read-through cache in front of any backend.
pub struct Cached<B> {
    inner: B,
    cache: Cache,
}

impl<B> Cached<B> {
    pub fn new(inner: B, cache: Cache) -> Self {
        Self { inner, cache }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: SearchBackend> SearchBackend for Cached<B> {
    fn fetch(&self, query: &str, limit: usize) -> Result<Vec<SearchItem>, BackendError> {
        let key = cache_key(Namespace::Search, &search_request(query));
        if let Some(bytes) = self.cache.get(Namespace::Search, &key)? {
            if let Ok(page) = serde_json::from_slice::<SearchPage>(&bytes) {
                return Ok(page.items.into_iter().take(limit).collect());
            }
            warn!(%key, "ignoring unreadable search cache entry");
        }
        let items = self.inner.fetch(query, limit)?;
        let page = SearchPage { items };
        let bytes = serde_json::to_vec(&page).expect("search pages serialize");
        self.cache.put(Namespace::Search, &key, &bytes)?;
        Ok(page.items)
    }
}

impl<B: LlmBackend> LlmBackend for Cached<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let payload = serde_json::to_value(request).expect("requests serialize");
        let key = cache_key(Namespace::Llm, &payload);
        if let Some(bytes) = self.cache.get(Namespace::Llm, &key)? {
            if let Ok(text) = String::from_utf8(bytes) {
                return Ok(text);
            }
            warn!(%key, "ignoring non-UTF-8 llm cache entry");
        }
        let text = self.inner.complete(request)?;
        self.cache.put(Namespace::Llm, &key, text.as_bytes())?;
        Ok(text)
    }
}

impl<B: EmbeddingBackend> EmbeddingBackend for Cached<B> {
    fn model_name(&self) -> &str {
        self.inner.model_name()
    }

    /// Caches per text; only misses are sent to the inner backend, in one batch.
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        let model = self.inner.model_name();
        let keys: Vec<String> = texts
            .iter()
            .map(|t| cache_key(Namespace::Embed, &json!({"model": model, "text": t})))
            .collect();
        let mut out: Vec<Option<Vec<f64>>> = Vec::with_capacity(texts.len());
        for key in &keys {
            let hit = self
                .cache
                .get(Namespace::Embed, key)?
                .and_then(|b| serde_json::from_slice::<Vec<f64>>(&b).ok());
            out.push(hit);
        }
        let mut miss_texts: Vec<String> = Vec::new();
        let mut miss_slots: Vec<Vec<usize>> = Vec::new();
        for (i, slot) in out.iter().enumerate() {
            if slot.is_some() {
                continue;
            }
            match miss_texts.iter().position(|t| t == &texts[i]) {
                Some(j) => miss_slots[j].push(i),
                None => {
                    miss_texts.push(texts[i].clone());
                    miss_slots.push(vec![i]);
                }
            }
        }
        if !miss_texts.is_empty() {
            let vectors = self.inner.embed(&miss_texts)?;
            if vectors.len() != miss_texts.len() {
                return Err(BackendError::Decode(format!(
                    "{} embeddings for {} inputs",
                    vectors.len(),
                    miss_texts.len()
                )));
            }
            for (vector, slots) in vectors.into_iter().zip(miss_slots) {
                let bytes = serde_json::to_vec(&vector).expect("vectors serialize");
                self.cache.put(Namespace::Embed, &keys[slots[0]], &bytes)?;
                for i in slots {
                    out[i] = Some(vector.clone());
                }
            }
        }
        Ok(out.into_iter().map(|v| v.expect("every slot filled")).collect())
    }
}
