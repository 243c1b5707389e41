//! Content-addressed response cache backed by an append-only JSONL file.
//!
//! Each line is one record:
//!
//! ```json
//! {"cache_key":"…","request_digest":"…","response":"…","timestamp":1760000000}
//! ```
//!
//! `cache_key` covers the backend id, the messages and every generation
//! parameter. Unreadable lines are skipped with a warning, so a damaged file
//! only costs misses.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use irote_core::backend::{BackendError, ChatBackend, ChatRequest};
use serde::{Deserialize, Serialize};

pub const CACHE_FILE: &str = "responses.jsonl";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheRecord {
    pub cache_key: String,
    pub request_digest: String,
    pub response: String,
    pub timestamp: u64,
}

pub struct ResponseCache {
    path: PathBuf,
    entries: RwLock<HashMap<String, String>>,
    file: Mutex<File>,
}

impl ResponseCache {
    /// Opens (creating if needed) `dir/responses.jsonl`.
    pub fn open(dir: &Path) -> std::io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(CACHE_FILE);
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            for (n, line) in reader.lines().enumerate() {
                let line = match line {
                    Ok(l) => l,
                    Err(e) => {
                        log::warn!("{}:{}: unreadable cache line ({e}), ignored", path.display(), n + 1);
                        continue;
                    }
                };
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheRecord>(&line) {
                    Ok(r) => {
                        entries.entry(r.cache_key).or_insert(r.response);
                    }
                    Err(e) => log::warn!("{}:{}: corrupt cache record ({e}), ignored", path.display(), n + 1),
                }
            }
        }
        let mut file = OpenOptions::new().create(true).append(true).open(&path)?;
        // A torn final record must not swallow the next append.
        if std::fs::metadata(&path)?.len() > 0 && !ends_with_newline(&path)? {
            file.write_all(b"\n")?;
        }
        Ok(Self { path, entries: RwLock::new(entries), file: Mutex::new(file) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.entries.read().expect("cache lock").get(key).cloned()
    }

    /// Stores `response` unless the key is already present; returns the
    /// stored text either way.
    pub fn insert(&self, key: &str, request_digest: &str, response: String) -> std::io::Result<String> {
        let mut entries = self.entries.write().expect("cache lock");
        if let Some(existing) = entries.get(key) {
            return Ok(existing.clone());
        }
        let record = CacheRecord {
            cache_key: key.into(),
            request_digest: request_digest.into(),
            response,
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        };
        let mut line = serde_json::to_string(&record).expect("record serializes");
        line.push('\n');
        self.file.lock().expect("cache file lock").write_all(line.as_bytes())?;
        entries.insert(record.cache_key, record.response.clone());
        Ok(record.response)
    }
}

fn ends_with_newline(path: &Path) -> std::io::Result<bool> {
    use std::io::{Read, Seek, SeekFrom};
    let mut f = File::open(path)?;
    f.seek(SeekFrom::End(-1))?;
    let mut b = [0u8; 1];
    f.read_exact(&mut b)?;
    Ok(b[0] == b'\n')
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
}

/// Serves repeated requests from a [`ResponseCache`]. Only successful
/// completions are stored.
pub struct Cached<B> {
    inner: B,
    cache: ResponseCache,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl<B: ChatBackend> Cached<B> {
    pub fn new(inner: B, cache: ResponseCache) -> Self {
        Self { inner, cache, hits: AtomicU64::new(0), misses: AtomicU64::new(0) }
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats { hits: self.hits.load(Ordering::SeqCst), misses: self.misses.load(Ordering::SeqCst) }
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    fn store(&self, request: &ChatRequest, key: &str, result: Result<String, BackendError>) -> Result<String, BackendError> {
        let text = result?;
        self.cache
            .insert(key, &request.request_digest(), text)
            .map_err(|e| BackendError::Transport(format!("cache write failed: {e}")))
    }
}

impl<B: ChatBackend> ChatBackend for Cached<B> {
    fn backend_id(&self) -> &str {
        self.inner.backend_id()
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let key = request.cache_key(self.inner.backend_id());
        if let Some(hit) = self.cache.get(&key) {
            self.hits.fetch_add(1, Ordering::SeqCst);
            return Ok(hit);
        }
        self.misses.fetch_add(1, Ordering::SeqCst);
        let result = self.inner.complete(request);
        self.store(request, &key, result)
    }

    fn complete_batch(&self, requests: &[ChatRequest]) -> Vec<Result<String, BackendError>> {
        let keys: Vec<String> = requests.iter().map(|r| r.cache_key(self.inner.backend_id())).collect();
        let mut out: Vec<Option<Result<String, BackendError>>> = keys.iter().map(|k| self.cache.get(k).map(Ok)).collect();
        let missing: Vec<usize> = (0..requests.len()).filter(|&i| out[i].is_none()).collect();
        self.hits.fetch_add((requests.len() - missing.len()) as u64, Ordering::SeqCst);
        self.misses.fetch_add(missing.len() as u64, Ordering::SeqCst);
        if !missing.is_empty() {
            let batch: Vec<ChatRequest> = missing.iter().map(|&i| requests[i].clone()).collect();
            for (&i, r) in missing.iter().zip(self.inner.complete_batch(&batch)) {
                out[i] = Some(self.store(&requests[i], &keys[i], r));
            }
        }
        out.into_iter().map(|r| r.expect("filled")).collect()
    }
}
