use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

use super::EmbeddingVector;
use crate::text::sha256_hex;

/// Embedding cache keyed by (embedding space, content hash). Reads take a
/// shared lock; inserts are serialized.
#[derive(Debug, Default)]
pub struct EmbeddingCache {
    entries: RwLock<HashMap<String, EmbeddingVector>>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

#[derive(Serialize, Deserialize)]
struct CacheFile {
    format: String,
    version: u32,
    entries: BTreeMap<String, EmbeddingVector>,
}

const FORMAT: &str = "dsrag-embedding-cache";

fn key(space: &str, text: &str) -> String {
    format!("{space}:{}", sha256_hex(text.as_bytes()))
}

impl EmbeddingCache {
    pub fn get(&self, space: &str, text: &str) -> Option<EmbeddingVector> {
        let found = self.entries.read().expect("cache lock").get(&key(space, text)).cloned();
        match found {
            Some(_) => self.hits.fetch_add(1, Ordering::Relaxed),
            None => self.misses.fetch_add(1, Ordering::Relaxed),
        };
        found
    }

    pub fn put(&self, space: &str, text: &str, v: &EmbeddingVector) {
        self.entries.write().expect("cache lock").insert(key(space, text), v.clone());
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// (hits, misses) since creation.
    pub fn stats(&self) -> (usize, usize) {
        (self.hits.load(Ordering::Relaxed), self.misses.load(Ordering::Relaxed))
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let file = CacheFile {
            format: FORMAT.into(),
            version: 1,
            entries: self
                .entries
                .read()
                .expect("cache lock")
                .iter()
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        };
        let bytes = serde_json::to_vec(&file).map_err(std::io::Error::other)?;
        crate::store::write_atomic(path, &bytes)
    }

    pub fn load(&self, path: &Path) -> std::io::Result<()> {
        let bytes = std::fs::read(path)?;
        let file: CacheFile = serde_json::from_slice(&bytes).map_err(std::io::Error::other)?;
        if file.format != FORMAT {
            return Err(std::io::Error::other(format!("{} is not an embedding cache", path.display())));
        }
        self.entries.write().expect("cache lock").extend(file.entries);
        Ok(())
    }
}
