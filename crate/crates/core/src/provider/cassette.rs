//! Recorded request/response pairs ("cassettes") and the adapters built on them.
//!
//! Layout: `<root>/<first two hex chars>/<key>.json`, one file per cache key,
//! holding `{request, response, recorded_at}`. The store is append-only.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{cache_key, CacheKey, CompletionAdapter, ModelRequest, ModelResponse, ProviderError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub request: ModelRequest,
    pub response: ModelResponse,
    pub recorded_at: String,
}

/// Clones share the writer lock.
#[derive(Debug, Clone)]
pub struct CassetteStore {
    root: PathBuf,
    write_lock: Arc<Mutex<()>>,
}

impl CassetteStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        CassetteStore {
            root: root.into(),
            write_lock: Arc::new(Mutex::new(())),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, key: &CacheKey) -> PathBuf {
        self.root.join(&key.as_str()[..2]).join(format!("{key}.json"))
    }

    pub fn load(&self, key: &CacheKey) -> Result<Option<CassetteEntry>, ProviderError> {
        let path = self.path_for(key);
        let raw = match fs::read_to_string(&path) {
            Ok(raw) => raw,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(ProviderError::Store(format!("{}: {e}", path.display()))),
        };
        serde_json::from_str(&raw)
            .map(Some)
            .map_err(|e| ProviderError::Store(format!("{}: {e}", path.display())))
    }

    /// Writes the entry unless a cassette for its key already exists.
    /// Returns whether a new file was written.
    pub fn insert(&self, entry: &CassetteEntry) -> Result<bool, ProviderError> {
        let key = cache_key(&entry.request);
        let path = self.path_for(&key);
        let _guard = self.write_lock.lock().expect("cassette write lock");
        if path.exists() {
            return Ok(false);
        }
        let dir = path.parent().expect("cassette path has a parent");
        let store_err = |e: std::io::Error| ProviderError::Store(format!("{}: {e}", path.display()));
        fs::create_dir_all(dir).map_err(store_err)?;
        let tmp = dir.join(format!(".{key}.tmp"));
        let mut body = serde_json::to_string_pretty(entry).expect("cassette serializes");
        body.push('\n');
        fs::File::create(&tmp)
            .and_then(|mut f| f.write_all(body.as_bytes()))
            .map_err(store_err)?;
        fs::rename(&tmp, &path).map_err(store_err)?;
        Ok(true)
    }

    /// All keys present in the store, sorted.
    pub fn keys(&self) -> Result<Vec<CacheKey>, ProviderError> {
        let mut keys = Vec::new();
        let Ok(shards) = fs::read_dir(&self.root) else {
            return Ok(keys);
        };
        for shard in shards.flatten() {
            let Ok(files) = fs::read_dir(shard.path()) else { continue };
            for f in files.flatten() {
                let name = f.file_name().to_string_lossy().into_owned();
                if let Some(k) = name.strip_suffix(".json").and_then(CacheKey::parse) {
                    keys.push(k);
                }
            }
        }
        keys.sort();
        Ok(keys)
    }

    fn lookup(&self, request: &ModelRequest) -> Result<Option<ModelResponse>, ProviderError> {
        let key = cache_key(request);
        match self.load(&key)? {
            Some(entry) if entry.request == *request => Ok(Some(entry.response)),
            Some(_) => Err(ProviderError::Store(format!(
                "cassette {key} holds a different request"
            ))),
            None => Ok(None),
        }
    }
}

/// Serves recorded responses only. A missing cassette is a [`ProviderError::ReplayMiss`].
#[derive(Debug)]
pub struct ReplayAdapter {
    store: CassetteStore,
}

impl ReplayAdapter {
    pub fn new(store: CassetteStore) -> Self {
        ReplayAdapter { store }
    }

    pub fn store(&self) -> &CassetteStore {
        &self.store
    }
}

impl CompletionAdapter for ReplayAdapter {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, ProviderError> {
        self.store
            .lookup(request)?
            .ok_or_else(|| ProviderError::ReplayMiss(cache_key(request).to_string()))
    }
}

/// Replays what is already recorded and records what is not.
///
/// Existing cassettes are never overwritten, so a recorded run can always be
/// replayed to the same result.
pub struct RecordingAdapter<A> {
    inner: A,
    store: CassetteStore,
}

impl<A: CompletionAdapter> RecordingAdapter<A> {
    pub fn new(inner: A, store: CassetteStore) -> Self {
        RecordingAdapter { inner, store }
    }

    pub fn store(&self) -> &CassetteStore {
        &self.store
    }
}

impl<A: CompletionAdapter> CompletionAdapter for RecordingAdapter<A> {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, ProviderError> {
        if let Some(recorded) = self.store.lookup(request)? {
            return Ok(recorded);
        }
        let response = self.inner.complete(request)?;
        self.store.insert(&CassetteEntry {
            request: request.clone(),
            response: response.clone(),
            recorded_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        })?;
        Ok(response)
    }
}
