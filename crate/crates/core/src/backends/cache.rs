use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, CompletionRequest, ModelResponse};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub fingerprint: String,
    pub model: String,
    pub text: String,
}

/// Content-addressed response store: `<root>/<first two hex>/<fingerprint>.json`.
///
/// Writes go through a temp file and a rename, so a killed process leaves
/// either a whole entry or none. Concurrent lookups of the same fingerprint
/// serialize on a per-fingerprint lock, so the producer runs at most once.
#[derive(Debug)]
pub struct ResponseCache {
    root: PathBuf,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl ResponseCache {
    pub fn new(root: impl Into<PathBuf>) -> std::io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(ResponseCache {
            root,
            locks: Mutex::new(HashMap::new()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, fingerprint: &str) -> PathBuf {
        let shard = fingerprint.get(..2).unwrap_or("xx");
        self.root.join(shard).join(format!("{fingerprint}.json"))
    }

    /// Reads an entry. Unreadable or mismatched files are treated as absent.
    pub fn get(&self, fingerprint: &str) -> Option<CacheEntry> {
        let path = self.path_for(fingerprint);
        let bytes = fs::read(&path).ok()?;
        match serde_json::from_slice::<CacheEntry>(&bytes) {
            Ok(entry) if entry.fingerprint == fingerprint => Some(entry),
            Ok(_) => {
                log::warn!("cache entry {} has a mismatched fingerprint; recomputing", path.display());
                None
            }
            Err(e) => {
                log::warn!("cache entry {} is corrupt ({e}); recomputing", path.display());
                None
            }
        }
    }

    pub fn put(&self, entry: &CacheEntry) -> std::io::Result<()> {
        let path = self.path_for(&entry.fingerprint);
        let dir = path.parent().expect("cache path has a shard directory");
        fs::create_dir_all(dir)?;
        let tmp = dir.join(format!(".{}.{}.tmp", entry.fingerprint, std::process::id()));
        {
            let mut file = fs::File::create(&tmp)?;
            file.write_all(&serde_json::to_vec(entry).map_err(std::io::Error::other)?)?;
        }
        fs::rename(&tmp, &path)
    }

    fn lock_for(&self, fingerprint: &str) -> Arc<Mutex<()>> {
        let mut locks = self.locks.lock().unwrap_or_else(|p| p.into_inner());
        locks.entry(fingerprint.to_string()).or_default().clone()
    }

    /// Returns the cached entry and `true`, or runs `producer`, stores its
    /// result and returns it with `false`. Errors are not cached.
    pub fn get_or_insert<E>(
        &self,
        fingerprint: &str,
        producer: impl FnOnce() -> Result<CacheEntry, E>,
    ) -> Result<(CacheEntry, bool), E> {
        let lock = self.lock_for(fingerprint);
        let _guard = lock.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(entry) = self.get(fingerprint) {
            return Ok((entry, true));
        }
        let entry = producer()?;
        if let Err(e) = self.put(&entry) {
            log::warn!("could not write cache entry {}: {e}", entry.fingerprint);
        }
        Ok((entry, false))
    }

    /// Number of stored entries.
    pub fn len(&self) -> usize {
        let Ok(shards) = fs::read_dir(&self.root) else { return 0 };
        shards
            .flatten()
            .filter_map(|s| fs::read_dir(s.path()).ok())
            .flat_map(|d| d.flatten())
            .filter(|f| f.path().extension().is_some_and(|e| e == "json"))
            .count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A backend whose completions are memoized in a [`ResponseCache`].
pub struct CachedBackend<B> {
    inner: B,
    cache: Arc<ResponseCache>,
}

impl<B: Backend> CachedBackend<B> {
    pub fn new(inner: B, cache: Arc<ResponseCache>) -> Self {
        CachedBackend { inner, cache }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }
}

impl<B: Backend> Backend for CachedBackend<B> {
    fn model(&self) -> &str {
        self.inner.model()
    }

    fn temperature(&self) -> f64 {
        self.inner.temperature()
    }

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<ModelResponse, BackendError> {
        let fingerprint = self.fingerprint(request);
        let start = Instant::now();
        let (entry, hit) = self.cache.get_or_insert(&fingerprint, || {
            let response = self.inner.complete(request)?;
            Ok(CacheEntry {
                fingerprint: fingerprint.clone(),
                model: response.model,
                text: response.text,
            })
        })?;
        Ok(ModelResponse {
            text: entry.text,
            model: entry.model,
            latency: start.elapsed(),
            cache_hit: hit,
            request_fingerprint: fingerprint,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{MockBackend, MockRule, MockSpec};

    fn mock(temp: f64) -> Arc<MockBackend> {
        Arc::new(MockBackend::new(
            "mock",
            temp,
            MockSpec::new(MockRule::Fixed { response: "Yes".into() }),
        ))
    }

    fn req(prompt: &str) -> CompletionRequest<'_> {
        CompletionRequest {
            prompt,
            max_tokens: 16,
            record_id: None,
        }
    }

    #[test]
    fn cold_then_warm() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Arc::new(ResponseCache::new(dir.path()).unwrap());
        let inner = mock(0.0);
        let backend = CachedBackend::new(inner.clone(), cache.clone());
        let a = backend.complete(&req("p")).unwrap();
        let b = backend.complete(&req("p")).unwrap();
        assert!(!a.cache_hit);
        assert!(b.cache_hit);
        assert_eq!(a.text, b.text);
        assert_eq!(inner.calls(), 1);
        assert_eq!(cache.len(), 1);
        assert!(cache.path_for(&a.request_fingerprint).exists());
    }

    #[test]
    fn temperature_is_part_of_the_key() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Arc::new(ResponseCache::new(dir.path()).unwrap());
        CachedBackend::new(mock(0.0), cache.clone()).complete(&req("p")).unwrap();
        CachedBackend::new(mock(0.7), cache.clone()).complete(&req("p")).unwrap();
        assert_eq!(cache.len(), 2);
    }

    #[test]
    fn corrupt_entry_is_recomputed() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Arc::new(ResponseCache::new(dir.path()).unwrap());
        let inner = mock(0.0);
        let backend = CachedBackend::new(inner.clone(), cache.clone());
        let fp = backend.complete(&req("p")).unwrap().request_fingerprint;
        fs::write(cache.path_for(&fp), b"{\"fingerprint\": tru").unwrap();
        let again = backend.complete(&req("p")).unwrap();
        assert!(!again.cache_hit);
        assert_eq!(inner.calls(), 2);
        assert!(backend.complete(&req("p")).unwrap().cache_hit);
    }

    #[test]
    fn concurrent_misses_call_producer_once() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Arc::new(ResponseCache::new(dir.path()).unwrap());
        let inner = mock(0.0);
        let backend = CachedBackend::new(inner.clone(), cache);
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| backend.complete(&req("same")).unwrap());
            }
        });
        assert_eq!(inner.calls(), 1);
    }

    #[test]
    fn errors_are_not_cached() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::new(dir.path()).unwrap();
        let r: Result<_, &str> = cache.get_or_insert("ab12", || Err("boom"));
        assert!(r.is_err());
        assert!(cache.is_empty());
    }
}
