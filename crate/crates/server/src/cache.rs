use axum::body::Bytes;
use indexmap::IndexMap;
use sha2::{Digest, Sha256};

pub type CacheKey = [u8; 32];

/// Hash of the endpoint, the normalized request and the session version.
pub fn cache_key(endpoint: &str, canonical_request: &[u8], version: u64) -> CacheKey {
    let mut h = Sha256::new();
    h.update(endpoint.as_bytes());
    h.update([0]);
    h.update(canonical_request);
    h.update([0]);
    h.update(version.to_le_bytes());
    h.finalize().into()
}

/// Least-recently-used map of serialized view payloads.
#[derive(Debug)]
pub struct ViewCache {
    capacity: usize,
    entries: IndexMap<CacheKey, Bytes>,
}

impl ViewCache {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            entries: IndexMap::new(),
        }
    }

    pub fn get(&mut self, key: &CacheKey) -> Option<Bytes> {
        let i = self.entries.get_index_of(key)?;
        let last = self.entries.len() - 1;
        self.entries.move_index(i, last);
        Some(self.entries[last].clone())
    }

    pub fn insert(&mut self, key: CacheKey, value: Bytes) {
        if self.entries.shift_remove(&key).is_none() && self.entries.len() == self.capacity {
            self.entries.shift_remove_index(0);
        }
        self.entries.insert(key, value);
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
