//! Content-addressed artifact storage.
//!
//! Artifacts are addressed by the SHA-256 of their bytes. Writes are
//! idempotent and every read re-verifies the digest. The file-backed store
//! lays blobs out under its root as `ab/cdef.../blob` (the engine roots it at
//! `artifacts/`) and keeps an append-only `index.log` of
//! `(hash, media type, size, created_at)` records next to them.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical;
use crate::clock::Clock;
use crate::domain::{ArtifactRef, ContentHash, MediaType};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("artifact {0} not found")]
    NotFound(ContentHash),
    #[error("artifact {hash} failed digest verification (got {actual})")]
    Integrity { hash: ContentHash, actual: ContentHash },
    #[error("artifact store I/O: {0}")]
    Io(#[from] io::Error),
    #[error("artifact index is corrupt: {0}")]
    Index(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub content_hash: ContentHash,
    pub media_type: MediaType,
    pub size: u64,
    pub created_at: u64,
}

pub trait ArtifactStore: Send + Sync {
    fn put(&self, bytes: &[u8], media_type: MediaType) -> Result<ArtifactRef, StoreError>;
    fn get(&self, reference: &ArtifactRef) -> Result<Vec<u8>, StoreError> {
        self.get_by_hash(&reference.content_hash)
    }
    fn get_by_hash(&self, hash: &ContentHash) -> Result<Vec<u8>, StoreError>;
    fn meta(&self, hash: &ContentHash) -> Option<ArtifactMeta>;
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub type SharedStore = Arc<dyn ArtifactStore>;

/// Put a value as canonical JSON.
pub fn put_json<T: Serialize>(store: &dyn ArtifactStore, value: &T) -> Result<ArtifactRef, StoreError> {
    let bytes = canonical::to_canonical_bytes(value).map_err(|e| StoreError::Index(e.to_string()))?;
    store.put(&bytes, MediaType::Json)
}

pub fn get_json<T: for<'de> Deserialize<'de>>(store: &dyn ArtifactStore, r: &ArtifactRef) -> Result<T, StoreError> {
    let bytes = store.get(r)?;
    serde_json::from_slice(&bytes).map_err(|e| StoreError::Index(format!("artifact {} is not the expected JSON: {e}", r.content_hash)))
}

fn verify(hash: &ContentHash, bytes: &[u8]) -> Result<(), StoreError> {
    let actual = ContentHash::of(bytes);
    if &actual != hash {
        return Err(StoreError::Integrity {
            hash: hash.clone(),
            actual,
        });
    }
    Ok(())
}

/// In-memory store for tests and embedded runs.
pub struct MemoryArtifactStore {
    blobs: RwLock<BTreeMap<ContentHash, (ArtifactMeta, Vec<u8>)>>,
    clock: Arc<dyn Clock>,
}

impl MemoryArtifactStore {
    pub fn new(clock: Arc<dyn Clock>) -> Self {
        Self {
            blobs: RwLock::new(BTreeMap::new()),
            clock,
        }
    }

    /// Every stored blob keyed by hash; used to compare whole artifact trees.
    pub fn snapshot(&self) -> BTreeMap<ContentHash, Vec<u8>> {
        self.blobs.read().iter().map(|(k, (_, b))| (k.clone(), b.clone())).collect()
    }

    #[cfg(test)]
    pub(crate) fn corrupt(&self, hash: &ContentHash) {
        if let Some((_, bytes)) = self.blobs.write().get_mut(hash) {
            bytes[0] ^= 0xff;
        }
    }
}

impl ArtifactStore for MemoryArtifactStore {
    fn put(&self, bytes: &[u8], media_type: MediaType) -> Result<ArtifactRef, StoreError> {
        let reference = ArtifactRef::for_bytes(bytes, media_type);
        let mut blobs = self.blobs.write();
        blobs.entry(reference.content_hash.clone()).or_insert_with(|| {
            let meta = ArtifactMeta {
                content_hash: reference.content_hash.clone(),
                media_type,
                size: bytes.len() as u64,
                created_at: self.clock.now_ms(),
            };
            (meta, bytes.to_vec())
        });
        Ok(reference)
    }

    fn get_by_hash(&self, hash: &ContentHash) -> Result<Vec<u8>, StoreError> {
        let blobs = self.blobs.read();
        let (_, bytes) = blobs.get(hash).ok_or_else(|| StoreError::NotFound(hash.clone()))?;
        verify(hash, bytes)?;
        Ok(bytes.clone())
    }

    fn meta(&self, hash: &ContentHash) -> Option<ArtifactMeta> {
        self.blobs.read().get(hash).map(|(m, _)| m.clone())
    }

    fn len(&self) -> usize {
        self.blobs.read().len()
    }
}

/// Directory-backed store.
pub struct FsArtifactStore {
    root: PathBuf,
    index: RwLock<BTreeMap<ContentHash, ArtifactMeta>>,
    writer: Mutex<()>,
    clock: Arc<dyn Clock>,
}

impl FsArtifactStore {
    /// Open (or create) a store under `root`, replaying `index.log`.
    pub fn open(root: impl Into<PathBuf>, clock: Arc<dyn Clock>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        let mut index = BTreeMap::new();
        let index_path = root.join("index.log");
        if index_path.exists() {
            let reader = BufReader::new(fs::File::open(&index_path)?);
            for (n, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<ArtifactMeta>(&line) {
                    Ok(meta) => {
                        index.entry(meta.content_hash.clone()).or_insert(meta);
                    }
                    // A torn final line from a crash mid-append is dropped;
                    // the blob itself was written first and stays addressable.
                    Err(e) => tracing::warn!(line = n + 1, error = %e, "skipping unreadable index record"),
                }
            }
        }
        Ok(Self {
            root,
            index: RwLock::new(index),
            writer: Mutex::new(()),
            clock,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn blob_path(&self, hash: &ContentHash) -> PathBuf {
        let h = hash.as_str();
        self.root.join(&h[..2]).join(&h[2..]).join("blob")
    }
}

impl ArtifactStore for FsArtifactStore {
    fn put(&self, bytes: &[u8], media_type: MediaType) -> Result<ArtifactRef, StoreError> {
        let reference = ArtifactRef::for_bytes(bytes, media_type);
        let _guard = self.writer.lock();
        if self.index.read().contains_key(&reference.content_hash) {
            return Ok(reference);
        }
        let path = self.blob_path(&reference.content_hash);
        let dir = path.parent().expect("blob path has a parent");
        fs::create_dir_all(dir)?;
        let tmp = dir.join("blob.tmp");
        fs::write(&tmp, bytes)?;
        fs::rename(&tmp, &path)?;

        let meta = ArtifactMeta {
            content_hash: reference.content_hash.clone(),
            media_type,
            size: bytes.len() as u64,
            created_at: self.clock.now_ms(),
        };
        let line = canonical::to_canonical_line(&meta).map_err(|e| StoreError::Index(e.to_string()))?;
        let mut log = OpenOptions::new().create(true).append(true).open(self.root.join("index.log"))?;
        writeln!(log, "{line}")?;
        log.sync_data()?;
        self.index.write().insert(reference.content_hash.clone(), meta);
        Ok(reference)
    }

    fn get_by_hash(&self, hash: &ContentHash) -> Result<Vec<u8>, StoreError> {
        let path = self.blob_path(hash);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(StoreError::NotFound(hash.clone())),
            Err(e) => return Err(e.into()),
        };
        verify(hash, &bytes)?;
        Ok(bytes)
    }

    fn meta(&self, hash: &ContentHash) -> Option<ArtifactMeta> {
        self.index.read().get(hash).cloned()
    }

    fn len(&self) -> usize {
        self.index.read().len()
    }
}
