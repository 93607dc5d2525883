//! Content-addressed response cache.
//!
//! Entries live at `<root>/<namespace>/<first two hex>/<key>`. Keys are the
//! SHA-256 of the namespace and the canonical JSON of the request, so
//! requests that differ only in field order or serialization whitespace
//! share an entry. Writes go to a temp file in the target directory and are
//! renamed into place; readers never see a partial payload.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::StoreError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Namespace {
    Search,
    Llm,
    Embed,
}

impl Namespace {
    pub const ALL: [Namespace; 3] = [Namespace::Search, Namespace::Llm, Namespace::Embed];

    pub fn as_str(self) -> &'static str {
        match self {
            Namespace::Search => "search",
            Namespace::Llm => "llm",
            Namespace::Embed => "embed",
        }
    }
}

impl fmt::Display for Namespace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Namespace {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Namespace::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| format!("unknown cache namespace {s:?}"))
    }
}

/// Compact JSON with object keys sorted recursively.
pub fn canonical_json(value: &Value) -> String {
    // Insert in sorted order so the result is sorted even if serde_json's
    // insertion-order map feature is enabled somewhere in the build.
    fn sorted(value: &Value) -> Value {
        match value {
            Value::Object(map) => {
                let mut keys: Vec<&String> = map.keys().collect();
                keys.sort();
                Value::Object(
                    keys.into_iter()
                        .map(|k| (k.clone(), sorted(&map[k])))
                        .collect::<serde_json::Map<_, _>>(),
                )
            }
            Value::Array(items) => Value::Array(items.iter().map(sorted).collect()),
            other => other.clone(),
        }
    }
    serde_json::to_string(&sorted(value)).expect("JSON values always serialize")
}

pub fn cache_key(namespace: Namespace, payload: &Value) -> String {
    let mut hasher = Sha256::new();
    hasher.update(namespace.as_str().as_bytes());
    hasher.update([0u8]);
    hasher.update(canonical_json(payload).as_bytes());
    hex::encode(hasher.finalize())
}

/// Filesystem cache rooted at one directory.
#[derive(Debug, Clone)]
pub struct Cache {
    root: PathBuf,
}

impl Cache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn entry_path(&self, namespace: Namespace, key: &str) -> PathBuf {
        let fanout = key.get(..2).unwrap_or(key);
        self.root.join(namespace.as_str()).join(fanout).join(key)
    }

    pub fn get(&self, namespace: Namespace, key: &str) -> Result<Option<Vec<u8>>, StoreError> {
        let path = self.entry_path(namespace, key);
        match std::fs::read(&path) {
            Ok(bytes) => Ok(Some(bytes)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(source) => Err(StoreError::Io { path, source }),
        }
    }

    pub fn put(&self, namespace: Namespace, key: &str, payload: &[u8]) -> Result<(), StoreError> {
        let path = self.entry_path(namespace, key);
        let dir = path.parent().expect("entry path has a parent");
        let io = |source| StoreError::Io {
            path: path.clone(),
            source,
        };
        std::fs::create_dir_all(dir).map_err(io)?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
        tmp.write_all(payload).map_err(io)?;
        tmp.as_file().sync_all().map_err(io)?;
        tmp.persist(&path).map_err(|e| io(e.error))?;
        Ok(())
    }

    /// Number of entries stored under a namespace.
    pub fn len(&self, namespace: Namespace) -> usize {
        let dir = self.root.join(namespace.as_str());
        let Ok(fanouts) = std::fs::read_dir(dir) else {
            return 0;
        };
        fanouts
            .filter_map(Result::ok)
            .filter_map(|d| std::fs::read_dir(d.path()).ok())
            .flat_map(|entries| entries.filter_map(Result::ok))
            .filter(|e| e.path().is_file())
            .count()
    }
}
