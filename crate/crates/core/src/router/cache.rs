use std::collections::HashSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use dashmap::DashMap;

use super::EmbeddingVector;
use crate::hash::ContentHash;
use crate::registry::ModuleId;

/// Embeddings keyed by content hash, with a per-module index so a refreshed
/// module's stale entries can be dropped together.
#[derive(Default)]
pub struct EmbeddingCache {
    entries: DashMap<ContentHash, Arc<EmbeddingVector>>,
    by_module: DashMap<ModuleId, HashSet<ContentHash>>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl EmbeddingCache {
    pub fn get(&self, hash: &ContentHash) -> Option<Arc<EmbeddingVector>> {
        let hit = self.entries.get(hash).map(|e| e.value().clone());
        let counter = if hit.is_some() {
            &self.hits
        } else {
            &self.misses
        };
        counter.fetch_add(1, Ordering::Relaxed);
        hit
    }

    pub fn contains(&self, hash: &ContentHash) -> bool {
        self.entries.contains_key(hash)
    }

    /// Inserts unless an entry already exists; returns the stored vector.
    pub fn insert(
        &self,
        module_id: Option<&ModuleId>,
        hash: ContentHash,
        vector: Arc<EmbeddingVector>,
    ) -> Arc<EmbeddingVector> {
        if let Some(id) = module_id {
            self.by_module
                .entry(id.clone())
                .or_default()
                .insert(hash.clone());
        }
        self.entries.entry(hash).or_insert(vector).value().clone()
    }

    pub fn invalidate_module(&self, id: &ModuleId) {
        if let Some((_, hashes)) = self.by_module.remove(id) {
            for hash in hashes {
                self.entries.remove(&hash);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }
}
