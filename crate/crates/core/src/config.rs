//! Pipeline configuration.
//!
//! A config is one immutable value built from defaults, then an optional
//! TOML file, then command-line overrides. The file uses one flat section
//! per backend:
//!
//! ```toml
//! [pipeline]
//! mode = 3
//! results_per_query = 10
//! top_k_selected = 5
//! similarity_aggregation = "max"
//! llm_temperature = 0.0
//!
//! [search]
//! kind = "live"
//! endpoint = "https://www.googleapis.com/customsearch/v1"
//! api_key = "..."
//! engine_id = "..."
//!
//! [llm]
//! endpoint = "http://localhost:8000/v1"
//! model = "llama-2-13b-chat"
//!
//! [embedding]
//! kind = "http"
//! endpoint = "http://localhost:8001/v1"
//! model = "bert-base-uncased"
//!
//! [cache]
//! dir = ".factcheck-cache"
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::prompts;
use crate::types::{Aggregation, Mode};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub pipeline: PipelineSection,
    pub search: SearchSection,
    pub llm: LlmSection,
    pub embedding: EmbeddingSection,
    pub cache: CacheSection,
    pub tagger: TaggerSection,
    pub prompts: PromptExemplars,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    pub mode: Mode,
    pub results_per_query: usize,
    pub top_k_selected: usize,
    pub similarity_aggregation: Aggregation,
    pub llm_temperature: f64,
    /// When false, bundles carry no stage timings so run logs are byte-stable.
    pub record_timings: bool,
    /// Parallel claims during evaluation.
    pub workers: usize,
}

impl Default for PipelineSection {
    fn default() -> Self {
        Self {
            mode: Mode::ThreeModule,
            results_per_query: 10,
            top_k_selected: 5,
            similarity_aggregation: Aggregation::Max,
            llm_temperature: 0.0,
            record_timings: true,
            workers: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchKind {
    Live,
    Fixture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSection {
    pub kind: SearchKind,
    pub endpoint: String,
    pub api_key: Option<String>,
    pub engine_id: Option<String>,
    /// Directory of recorded responses for the fixture backend.
    pub fixture_dir: Option<PathBuf>,
}

impl Default for SearchSection {
    fn default() -> Self {
        Self {
            kind: SearchKind::Live,
            endpoint: "https://www.googleapis.com/customsearch/v1".into(),
            api_key: None,
            engine_id: None,
            fixture_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSection {
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout_secs: u64,
}

impl Default for LlmSection {
    fn default() -> Self {
        Self {
            endpoint: "http://localhost:8000/v1".into(),
            model: "llama-2-13b-chat".into(),
            api_key: None,
            timeout_secs: 120,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingKind {
    Http,
    /// Built-in feature-hashing bag of words; no server needed.
    Hashing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingSection {
    pub kind: EmbeddingKind,
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    /// Dimension of the hashing embedder.
    pub dim: usize,
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        Self {
            kind: EmbeddingKind::Http,
            endpoint: "http://localhost:8001/v1".into(),
            model: "bert-base-uncased".into(),
            api_key: None,
            dim: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CacheSection {
    pub dir: PathBuf,
}

impl Default for CacheSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from(".factcheck-cache"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaggerKind {
    Heuristic,
    Sidecar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaggerSection {
    pub kind: TaggerKind,
    /// Shell command that launches the sidecar.
    pub command: Option<String>,
    pub timeout_ms: u64,
}

impl Default for TaggerSection {
    fn default() -> Self {
        Self {
            kind: TaggerKind::Heuristic,
            command: None,
            timeout_ms: 10_000,
        }
    }
}

/// Kinds of prompt that take a 1-shot exemplar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Filter,
    Verdict,
    OneModule,
}

impl std::str::FromStr for PromptKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "filter" => Ok(PromptKind::Filter),
            "verdict" => Ok(PromptKind::Verdict),
            "one_module" => Ok(PromptKind::OneModule),
            other => Err(format!(
                "prompt kind must be filter, verdict or one_module, got {other:?}"
            )),
        }
    }
}

/// Exemplar text per prompt kind. An empty string gives the zero-shot prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PromptExemplars(pub BTreeMap<PromptKind, String>);

impl Default for PromptExemplars {
    fn default() -> Self {
        Self(BTreeMap::from([
            (PromptKind::Filter, prompts::DEFAULT_FILTER_EXEMPLAR.to_string()),
            (PromptKind::Verdict, prompts::DEFAULT_VERDICT_EXEMPLAR.to_string()),
            (PromptKind::OneModule, prompts::DEFAULT_ONE_MODULE_EXEMPLAR.to_string()),
        ]))
    }
}

impl PromptExemplars {
    pub fn get(&self, kind: PromptKind) -> &str {
        self.0.get(&kind).map(String::as_str).unwrap_or("")
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let mut config: PipelineConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        // Sections given in the file replace the whole exemplar map; restore
        // defaults for kinds the file did not mention.
        for (kind, text) in PromptExemplars::default().0 {
            config.prompts.0.entry(kind).or_insert(text);
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text, path)
    }

    /// Range checks that do not depend on which backends are used.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let p = &self.pipeline;
        if p.results_per_query == 0 {
            return Err(ConfigError::Invalid {
                field: "results_per_query",
                detail: "must be positive".into(),
            });
        }
        if p.top_k_selected == 0 {
            return Err(ConfigError::Invalid {
                field: "top_k_selected",
                detail: "must be positive".into(),
            });
        }
        if !(p.llm_temperature.is_finite() && p.llm_temperature >= 0.0) {
            return Err(ConfigError::Invalid {
                field: "llm_temperature",
                detail: "must be a non-negative number".into(),
            });
        }
        if p.workers == 0 {
            return Err(ConfigError::Invalid {
                field: "workers",
                detail: "must be positive".into(),
            });
        }
        if self.embedding.kind == EmbeddingKind::Hashing && self.embedding.dim == 0 {
            return Err(ConfigError::Invalid {
                field: "embedding.dim",
                detail: "must be positive".into(),
            });
        }
        Ok(())
    }

    /// Checks the credentials a live (non-offline) run needs.
    pub fn validate_live(&self) -> Result<(), ConfigError> {
        if self.search.kind == SearchKind::Live {
            if self.search.api_key.as_deref().unwrap_or("").is_empty() {
                return Err(ConfigError::Missing("search.api_key"));
            }
            if self.search.engine_id.as_deref().unwrap_or("").is_empty() {
                return Err(ConfigError::Missing("search.engine_id"));
            }
        }
        if self.search.kind == SearchKind::Fixture && self.search.fixture_dir.is_none() {
            return Err(ConfigError::Missing("search.fixture_dir"));
        }
        if self.tagger.kind == TaggerKind::Sidecar && self.tagger.command.is_none() {
            return Err(ConfigError::Missing("tagger.command"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_configuration() {
        let c = PipelineConfig::default();
        assert_eq!(c.pipeline.results_per_query, 10);
        assert_eq!(c.pipeline.top_k_selected, 5);
        assert_eq!(c.pipeline.similarity_aggregation, Aggregation::Max);
        assert_eq!(c.pipeline.llm_temperature, 0.0);
        assert_eq!(c.pipeline.mode, Mode::ThreeModule);
        c.validate().unwrap();
    }

    #[test]
    fn toml_sections_override_defaults() {
        let text = r#"
            [pipeline]
            mode = 2
            similarity_aggregation = "mean"

            [search]
            kind = "fixture"
            fixture_dir = "fx"

            [prompts]
            verdict = ""
        "#;
        let c = PipelineConfig::from_toml_str(text, Path::new("t.toml")).unwrap();
        assert_eq!(c.pipeline.mode, Mode::TwoModule);
        assert_eq!(c.pipeline.similarity_aggregation, Aggregation::Mean);
        assert_eq!(c.pipeline.results_per_query, 10);
        assert_eq!(c.search.kind, SearchKind::Fixture);
        assert_eq!(c.prompts.get(PromptKind::Verdict), "");
        assert_eq!(
            c.prompts.get(PromptKind::Filter),
            prompts::DEFAULT_FILTER_EXEMPLAR
        );
        c.validate_live().unwrap();
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let err = PipelineConfig::from_toml_str("[pipeline]\ntop_k = 3\n", Path::new("x.toml"))
            .unwrap_err();
        assert!(err.to_string().contains("top_k"), "{err}");
    }

    #[test]
    fn live_search_requires_api_key() {
        let c = PipelineConfig::default();
        let err = c.validate_live().unwrap_err();
        assert!(err.to_string().contains("search.api_key"));
    }

    #[test]
    fn zero_top_k_is_invalid() {
        let mut c = PipelineConfig::default();
        c.pipeline.top_k_selected = 0;
        assert!(c.validate().is_err());
        c.pipeline.top_k_selected = 5;
        c.pipeline.llm_temperature = -1.0;
        assert!(c.validate().is_err());
    }
}
