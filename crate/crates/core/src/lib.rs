//! Claim verification over web search results with an LLM.
//!
//! A claim goes through up to three stages: evidence retrieval (two search
//! queries, merged and deduplicated), evidence selection (an LLM filter
//! followed by embedding similarity), and verdict generation. The
//! [`eval`] module runs the pipeline over FEVER-style datasets.

pub mod backend;
pub mod config;
pub mod error;
pub mod eval;
pub mod prompts;
pub mod query;
pub mod retrieval;
pub mod selection;
pub mod store;
pub mod tagger;
pub mod testkit;
pub mod types;
pub mod verdict;

pub use config::PipelineConfig;
pub use error::{BackendError, Error};
pub use types::{Aggregation, Claim, Label, Mode};
pub use verdict::{check_claim, Backends, ParseStatus, VerdictBundle};
