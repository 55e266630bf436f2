use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{request_hash, Backend, BackendError, Capabilities, GenerationRequest, GenerationResult};

#[derive(Debug, Serialize, Deserialize)]
struct CacheLine {
    request_hash: String,
    request: GenerationRequest,
    result: GenerationResult,
}

/// Results keyed by request hash, optionally mirrored to an append-only
/// JSON-lines file.
#[derive(Debug)]
pub struct CacheStore {
    entries: Mutex<HashMap<String, GenerationResult>>,
    file: Option<Mutex<File>>,
    path: Option<PathBuf>,
}

impl CacheStore {
    pub fn in_memory() -> Self {
        CacheStore {
            entries: Mutex::new(HashMap::new()),
            file: None,
            path: None,
        }
    }

    /// Loads every line of an existing cache file (if any) and appends new
    /// records to it.
    pub fn open(path: &Path) -> Result<Self, BackendError> {
        let cache_err = |e: std::io::Error| BackendError::Cache(format!("{}: {e}", path.display()));
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path).map_err(cache_err)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line.map_err(cache_err)?;
                if line.trim().is_empty() {
                    continue;
                }
                let parsed: CacheLine = serde_json::from_str(&line)
                    .map_err(|e| BackendError::Cache(format!("{}:{}: {e}", path.display(), i + 1)))?;
                entries.entry(parsed.request_hash).or_insert(parsed.result);
            }
        }
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(cache_err)?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(cache_err)?;
        Ok(CacheStore {
            entries: Mutex::new(entries),
            file: Some(Mutex::new(file)),
            path: Some(path.to_path_buf()),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stores a result. A request that is already present keeps its first
    /// result and nothing is appended.
    pub fn record(&self, request: &GenerationRequest, result: &GenerationResult) -> Result<(), BackendError> {
        let hash = request_hash(request);
        let mut entries = self.entries.lock().expect("cache lock");
        if entries.contains_key(&hash) {
            return Ok(());
        }
        if let Some(file) = &self.file {
            let line = serde_json::to_string(&CacheLine {
                request_hash: hash.clone(),
                request: request.clone(),
                result: result.clone(),
            })
            .map_err(|e| BackendError::Cache(e.to_string()))?;
            let mut f = file.lock().expect("cache file lock");
            writeln!(f, "{line}").map_err(|e| BackendError::Cache(e.to_string()))?;
            f.flush().map_err(|e| BackendError::Cache(e.to_string()))?;
        }
        entries.insert(hash, result.clone());
        Ok(())
    }

    pub fn replay(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        let hash = request_hash(request);
        self.entries
            .lock()
            .expect("cache lock")
            .get(&hash)
            .cloned()
            .ok_or(BackendError::CacheMiss { request_hash: hash })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheMode {
    /// Serve hits from the store; forward misses to the inner backend and
    /// record them.
    Record,
    /// Serve hits only; a miss is an error and the inner backend is never called.
    Replay,
}

pub struct CachedBackend<B> {
    inner: B,
    store: CacheStore,
    mode: CacheMode,
}

impl<B: Backend> CachedBackend<B> {
    pub fn new(inner: B, store: CacheStore, mode: CacheMode) -> Self {
        CachedBackend { inner, store, mode }
    }

    pub fn store(&self) -> &CacheStore {
        &self.store
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: Backend> Backend for CachedBackend<B> {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        match self.store.replay(request) {
            Ok(hit) => Ok(hit),
            Err(miss) if self.mode == CacheMode::Replay => Err(miss),
            Err(_) => {
                let result = self.inner.generate(request)?;
                self.store.record(request, &result)?;
                Ok(result)
            }
        }
    }

    fn capabilities(&self) -> Capabilities {
        self.inner.capabilities()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;
    use std::sync::atomic::{AtomicU64, Ordering};

    struct Counting {
        calls: AtomicU64,
    }

    impl Backend for Counting {
        fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            Ok(GenerationResult {
                text: format!("{}#{n}", request.prompt),
                option_probs: Some(BTreeMap::from([("Yes".into(), 0.1 + 0.2), ("No".into(), 0.7)])),
                target_token_logprobs: Some(vec![-1.0 / 3.0]),
            })
        }
    }

    fn counting() -> Counting {
        Counting {
            calls: AtomicU64::new(0),
        }
    }

    #[test]
    fn replay_is_byte_identical_and_never_calls_inner() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let req = GenerationRequest::text("prompt", 4).with_options(["Yes", "No"]);
        let recorded = {
            let rec = CachedBackend::new(counting(), CacheStore::open(&path).unwrap(), CacheMode::Record);
            let r = rec.generate(&req).unwrap();
            assert_eq!(rec.generate(&req).unwrap(), r);
            assert_eq!(rec.inner().calls.load(Ordering::SeqCst), 1);
            r
        };
        let replay = CachedBackend::new(counting(), CacheStore::open(&path).unwrap(), CacheMode::Replay);
        let again = replay.generate(&req).unwrap();
        assert_eq!(
            serde_json::to_vec(&again).unwrap(),
            serde_json::to_vec(&recorded).unwrap()
        );
        let miss = replay.generate(&GenerationRequest::text("unseen", 4));
        assert!(matches!(miss, Err(BackendError::CacheMiss { .. })));
        assert_eq!(replay.inner().calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn cache_file_is_append_only_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested").join("cache.jsonl");
        let rec = CachedBackend::new(counting(), CacheStore::open(&path).unwrap(), CacheMode::Record);
        for i in 0..3 {
            rec.generate(&GenerationRequest::text(format!("p{i}"), 1)).unwrap();
        }
        rec.generate(&GenerationRequest::text("p0", 1)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        let first: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
        assert_eq!(first["request"]["prompt"], "p0");
        assert_eq!(first["request_hash"], request_hash(&GenerationRequest::text("p0", 1)));
        assert!(first["result"]["text"].is_string());

        drop(rec);
        let rec = CachedBackend::new(counting(), CacheStore::open(&path).unwrap(), CacheMode::Record);
        rec.generate(&GenerationRequest::text("p3", 1)).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 4);
        assert_eq!(rec.store().len(), 4);
    }

    #[test]
    fn corrupt_cache_line_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        std::fs::write(&path, "not json\n").unwrap();
        match CacheStore::open(&path) {
            Err(BackendError::Cache(msg)) => assert!(msg.contains(":1:"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }
}
