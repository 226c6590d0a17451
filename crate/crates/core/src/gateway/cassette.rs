//! Request/response logs keyed by request fingerprint.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{Backend, CompletionRequest, GatewayError};
use crate::ndjson;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CassetteMode {
    /// Serve hits from the cassette; on a miss call the inner backend and
    /// append the response.
    Record,
    /// Hits only; a miss is an error.
    ReplayStrict,
    /// Hits from the cassette; misses go to the inner backend unrecorded.
    ReplayFallthrough,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub fingerprint: String,
    pub request: CompletionRequest,
    pub response: String,
}

/// Ordered entries with a fingerprint index; the first entry for a
/// fingerprint wins.
#[derive(Debug, Clone, Default)]
pub struct Cassette {
    entries: Vec<CassetteEntry>,
    index: HashMap<String, usize>,
}

impl Cassette {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: impl IntoIterator<Item = CassetteEntry>) -> Self {
        let mut c = Cassette::new();
        for e in entries {
            c.insert(e);
        }
        c
    }

    /// A missing file loads as an empty cassette.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let path = path.as_ref();
        if !path.exists() {
            return Ok(Cassette::new());
        }
        let entries = ndjson::read::<CassetteEntry>(path)
            .map_err(|e| GatewayError::Cassette(e.to_string()))?;
        Ok(Self::from_entries(entries))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), GatewayError> {
        ndjson::write(path, &self.entries).map_err(|e| GatewayError::Cassette(e.to_string()))
    }

    /// Returns false when the fingerprint was already present.
    pub fn insert(&mut self, entry: CassetteEntry) -> bool {
        if self.index.contains_key(&entry.fingerprint) {
            return false;
        }
        self.index.insert(entry.fingerprint.clone(), self.entries.len());
        self.entries.push(entry);
        true
    }

    pub fn record(&mut self, request: &CompletionRequest, response: impl Into<String>) -> bool {
        self.insert(CassetteEntry {
            fingerprint: request.fingerprint(),
            request: request.clone(),
            response: response.into(),
        })
    }

    pub fn get(&self, fingerprint: &str) -> Option<&CassetteEntry> {
        self.index.get(fingerprint).map(|&i| &self.entries[i])
    }

    pub fn entries(&self) -> &[CassetteEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// A [`Backend`] serving from a cassette, optionally backed by a live
/// backend. Cassette writes are serialized behind a mutex.
pub struct CassetteBackend {
    mode: CassetteMode,
    cassette: Mutex<Cassette>,
    path: Option<PathBuf>,
    inner: Option<Arc<dyn Backend>>,
    inner_calls: AtomicUsize,
}

impl CassetteBackend {
    pub fn new(mode: CassetteMode, cassette: Cassette, inner: Option<Arc<dyn Backend>>) -> Self {
        CassetteBackend {
            mode,
            cassette: Mutex::new(cassette),
            path: None,
            inner,
            inner_calls: AtomicUsize::new(0),
        }
    }

    pub fn replay(cassette: Cassette) -> Self {
        Self::new(CassetteMode::ReplayStrict, cassette, None)
    }

    /// Opens `path`; in record mode new entries are appended to it as they
    /// arrive.
    pub fn open(
        path: impl AsRef<Path>,
        mode: CassetteMode,
        inner: Option<Arc<dyn Backend>>,
    ) -> Result<Self, GatewayError> {
        let cassette = Cassette::load(path.as_ref())?;
        let mut backend = Self::new(mode, cassette, inner);
        backend.path = Some(path.as_ref().to_path_buf());
        Ok(backend)
    }

    pub fn mode(&self) -> CassetteMode {
        self.mode
    }

    /// Calls that reached the inner (live) backend.
    pub fn inner_calls(&self) -> usize {
        self.inner_calls.load(Ordering::SeqCst)
    }

    pub fn snapshot(&self) -> Cassette {
        self.cassette.lock().unwrap().clone()
    }

    fn call_inner(&self, request: &CompletionRequest, fp: &str) -> Result<String, GatewayError> {
        let inner = self.inner.as_ref().ok_or_else(|| GatewayError::CassetteMiss {
            fingerprint: fp.to_string(),
        })?;
        self.inner_calls.fetch_add(1, Ordering::SeqCst);
        inner.complete(request)
    }
}

impl Backend for CassetteBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        let fp = request.fingerprint();
        if let Some(hit) = self.cassette.lock().unwrap().get(&fp) {
            return Ok(hit.response.clone());
        }
        match self.mode {
            CassetteMode::ReplayStrict => Err(GatewayError::CassetteMiss { fingerprint: fp }),
            CassetteMode::ReplayFallthrough => self.call_inner(request, &fp),
            CassetteMode::Record => {
                let response = self.call_inner(request, &fp)?;
                let entry = CassetteEntry {
                    fingerprint: fp,
                    request: request.clone(),
                    response: response.clone(),
                };
                let mut cassette = self.cassette.lock().unwrap();
                if cassette.insert(entry.clone()) {
                    if let Some(path) = &self.path {
                        ndjson::append(path, &entry)
                            .map_err(|e| GatewayError::Cassette(e.to_string()))?;
                    }
                }
                Ok(response)
            }
        }
    }
}
