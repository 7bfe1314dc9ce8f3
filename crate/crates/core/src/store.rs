//! Durable persistence: sessions as JSON documents and binary artifacts in a
//! content-addressed blob tree.
//!
//! On-disk layout (version 1), rooted at the configured data root:
//!
//! ```text
//! LAYOUT                         "analogy-store v1"
//! blobs/<h0h1>/<h2h3>/<hash>      raw bytes, named by SHA-256
//! blobs/<h0h1>/<h2h3>/<hash>.meta JSON {media_type, byte_length}
//! sessions/<session-id>.json      one PipelineSession document
//! tmp/                            staging area for atomic writes
//! ```
//!
//! Every write lands in `tmp/` first and is renamed into place, so a reader
//! never observes a half-written file. Every blob read re-hashes the bytes.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ids::SessionId;
use crate::session::PipelineSession;

pub const LAYOUT_TAG: &str = "analogy-store v1";

/// Reference to an immutable stored artifact.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlobRef {
    pub hash: String,
    pub media_type: String,
    pub byte_length: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("blob {0} not found")]
    BlobNotFound(String),
    #[error("session {0} not found")]
    SessionNotFound(SessionId),
    #[error("integrity error for blob {hash}: {detail}")]
    Integrity { hash: String, detail: String },
    #[error("corrupt session document {path}: {source}")]
    CorruptSession {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("store layout at {0} is not `{LAYOUT_TAG}`")]
    Layout(PathBuf),
    #[error("storage I/O: {0}")]
    Io(#[from] io::Error),
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn valid_hash(hash: &str) -> bool {
    hash.len() == 64 && hash.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))
}

/// Persistence contract used by the engine. [`FsStore`] is the default backing.
pub trait Store: Send + Sync {
    fn put_blob(&self, bytes: &[u8], media_type: &str) -> Result<BlobRef, StoreError>;
    fn get_blob(&self, blob: &BlobRef) -> Result<Vec<u8>, StoreError>;
    /// Looks up a blob by hash alone (used by the HTTP blob endpoint).
    fn stat_blob(&self, hash: &str) -> Result<BlobRef, StoreError>;
    fn save_session(&self, session: &PipelineSession) -> Result<(), StoreError>;
    fn load_session(&self, id: &SessionId) -> Result<PipelineSession, StoreError>;
    /// Newest first, ordered by `created_at` then id.
    fn list_sessions(&self, offset: usize, limit: usize)
        -> Result<Vec<PipelineSession>, StoreError>;
}

#[derive(Debug, Serialize, Deserialize)]
struct BlobMeta {
    media_type: String,
    byte_length: u64,
}

#[derive(Debug, Clone)]
pub struct FsStore {
    root: PathBuf,
}

impl FsStore {
    /// Opens (creating if needed) a store rooted at `root`.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(root.join("blobs"))?;
        fs::create_dir_all(root.join("sessions"))?;
        fs::create_dir_all(root.join("tmp"))?;
        let layout = root.join("LAYOUT");
        match fs::read_to_string(&layout) {
            Ok(tag) if tag.trim() == LAYOUT_TAG => {}
            Ok(_) => return Err(StoreError::Layout(root)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                fs::write(&layout, format!("{LAYOUT_TAG}\n"))?;
            }
            Err(e) => return Err(e.into()),
        }
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Path of the file holding a blob's bytes.
    pub fn blob_path(&self, hash: &str) -> PathBuf {
        self.root
            .join("blobs")
            .join(&hash[0..2])
            .join(&hash[2..4])
            .join(hash)
    }

    fn meta_path(&self, hash: &str) -> PathBuf {
        self.blob_path(hash).with_extension("meta")
    }

    fn session_path(&self, id: &SessionId) -> PathBuf {
        self.root.join("sessions").join(format!("{id}.json"))
    }

    /// Total bytes held under `blobs/` (data plus metadata files).
    pub fn blob_bytes_on_disk(&self) -> Result<u64, StoreError> {
        fn walk(dir: &Path, acc: &mut u64) -> io::Result<()> {
            for entry in fs::read_dir(dir)? {
                let entry = entry?;
                let ft = entry.file_type()?;
                if ft.is_dir() {
                    walk(&entry.path(), acc)?;
                } else {
                    *acc += entry.metadata()?.len();
                }
            }
            Ok(())
        }
        let mut total = 0;
        walk(&self.root.join("blobs"), &mut total)?;
        Ok(total)
    }

    fn write_atomic(&self, dest: &Path, bytes: &[u8]) -> Result<(), StoreError> {
        if let Some(parent) = dest.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut tmp = tempfile::NamedTempFile::new_in(self.root.join("tmp"))?;
        tmp.write_all(bytes)?;
        tmp.as_file().sync_all()?;
        tmp.persist(dest).map_err(|e| StoreError::Io(e.error))?;
        Ok(())
    }

    fn read_meta(&self, hash: &str) -> Result<BlobMeta, StoreError> {
        let raw = match fs::read(self.meta_path(hash)) {
            Ok(raw) => raw,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(StoreError::BlobNotFound(hash.to_string()))
            }
            Err(e) => return Err(e.into()),
        };
        serde_json::from_slice(&raw).map_err(|e| StoreError::Integrity {
            hash: hash.to_string(),
            detail: format!("unreadable metadata: {e}"),
        })
    }
}

impl Store for FsStore {
    fn put_blob(&self, bytes: &[u8], media_type: &str) -> Result<BlobRef, StoreError> {
        let hash = sha256_hex(bytes);
        let blob = BlobRef {
            hash: hash.clone(),
            media_type: media_type.to_string(),
            byte_length: bytes.len() as u64,
        };
        let path = self.blob_path(&hash);
        if path.exists() {
            // Same bytes are already present; keep the first recorded media type.
            let meta = self.read_meta(&hash)?;
            return Ok(BlobRef {
                media_type: meta.media_type,
                ..blob
            });
        }
        let meta = serde_json::to_vec(&BlobMeta {
            media_type: media_type.to_string(),
            byte_length: bytes.len() as u64,
        })
        .expect("blob metadata serializes");
        self.write_atomic(&self.meta_path(&hash), &meta)?;
        self.write_atomic(&path, bytes)?;
        Ok(blob)
    }

    fn get_blob(&self, blob: &BlobRef) -> Result<Vec<u8>, StoreError> {
        if !valid_hash(&blob.hash) {
            return Err(StoreError::BlobNotFound(blob.hash.clone()));
        }
        let bytes = match fs::read(self.blob_path(&blob.hash)) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(StoreError::BlobNotFound(blob.hash.clone()))
            }
            Err(e) => return Err(e.into()),
        };
        let actual = sha256_hex(&bytes);
        if actual != blob.hash {
            return Err(StoreError::Integrity {
                hash: blob.hash.clone(),
                detail: format!("content digest is {actual}"),
            });
        }
        if bytes.len() as u64 != blob.byte_length {
            return Err(StoreError::Integrity {
                hash: blob.hash.clone(),
                detail: format!("length {} != recorded {}", bytes.len(), blob.byte_length),
            });
        }
        Ok(bytes)
    }

    fn stat_blob(&self, hash: &str) -> Result<BlobRef, StoreError> {
        if !valid_hash(hash) || !self.blob_path(hash).exists() {
            return Err(StoreError::BlobNotFound(hash.to_string()));
        }
        let meta = self.read_meta(hash)?;
        Ok(BlobRef {
            hash: hash.to_string(),
            media_type: meta.media_type,
            byte_length: meta.byte_length,
        })
    }

    fn save_session(&self, session: &PipelineSession) -> Result<(), StoreError> {
        let doc = serde_json::to_vec_pretty(session).expect("session serializes");
        self.write_atomic(&self.session_path(&session.id), &doc)
    }

    fn load_session(&self, id: &SessionId) -> Result<PipelineSession, StoreError> {
        let path = self.session_path(id);
        let raw = match fs::read(&path) {
            Ok(raw) => raw,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(StoreError::SessionNotFound(id.clone()))
            }
            Err(e) => return Err(e.into()),
        };
        serde_json::from_slice(&raw).map_err(|source| StoreError::CorruptSession { path, source })
    }

    fn list_sessions(
        &self,
        offset: usize,
        limit: usize,
    ) -> Result<Vec<PipelineSession>, StoreError> {
        let mut all = Vec::new();
        for entry in fs::read_dir(self.root.join("sessions"))? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let raw = fs::read(&path)?;
            let session: PipelineSession = serde_json::from_slice(&raw)
                .map_err(|source| StoreError::CorruptSession { path, source })?;
            all.push(session);
        }
        all.sort_by(|a, b| {
            b.created_at
                .cmp(&a.created_at)
                .then_with(|| b.id.cmp(&a.id))
        });
        Ok(all.into_iter().skip(offset).take(limit).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::session::{Concept, Subject};
    use std::process::Command;

    fn store() -> (tempfile::TempDir, FsStore) {
        let dir = tempfile::tempdir().unwrap();
        let store = FsStore::open(dir.path()).unwrap();
        (dir, store)
    }

    #[test]
    fn duplicate_put_is_idempotent_and_does_not_grow() {
        let (_d, s) = store();
        let a = s.put_blob(b"hello", "text/plain").unwrap();
        let size = s.blob_bytes_on_disk().unwrap();
        let b = s.put_blob(b"hello", "text/plain").unwrap();
        assert_eq!(a, b);
        assert_eq!(size, s.blob_bytes_on_disk().unwrap());
    }

    #[test]
    fn empty_blob_is_valid() {
        let (_d, s) = store();
        let r = s.put_blob(b"", "application/octet-stream").unwrap();
        assert_eq!(r.byte_length, 0);
        assert_eq!(s.get_blob(&r).unwrap(), Vec::<u8>::new());
    }

    #[test]
    fn digest_matches_independent_tool() {
        let (dir, s) = store();
        let r1 = s.put_blob(b"first", "text/plain").unwrap();
        let r2 = s.put_blob(b"second", "text/plain").unwrap();
        assert_ne!(r1.hash, r2.hash);
        // Known SHA-256 test vector for "abc".
        let abc = s.put_blob(b"abc", "text/plain").unwrap();
        assert_eq!(
            abc.hash,
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        if let Ok(out) = Command::new("sha256sum").arg(s.blob_path(&r1.hash)).output() {
            let text = String::from_utf8_lossy(&out.stdout);
            assert!(text.starts_with(&r1.hash), "sha256sum says {text}");
        }
        drop(dir);
    }

    #[test]
    fn tampered_blob_raises_integrity_error() {
        let (_d, s) = store();
        let r = s.put_blob(b"pristine bytes", "text/plain").unwrap();
        let path = s.blob_path(&r.hash);
        let mut bytes = fs::read(&path).unwrap();
        bytes[3] ^= 0x01;
        fs::write(&path, bytes).unwrap();
        assert!(matches!(s.get_blob(&r), Err(StoreError::Integrity { .. })));
    }

    #[test]
    fn missing_blob_and_session_are_not_found() {
        let (_d, s) = store();
        let fake = BlobRef {
            hash: "0".repeat(64),
            media_type: "x".into(),
            byte_length: 0,
        };
        assert!(matches!(s.get_blob(&fake), Err(StoreError::BlobNotFound(_))));
        assert!(matches!(
            s.load_session(&SessionId::random()),
            Err(StoreError::SessionNotFound(_))
        ));
    }

    #[test]
    fn session_round_trip() {
        let (_d, s) = store();
        let concept = Concept::new("Newton's First Law", Subject::Physics, None).unwrap();
        let session = PipelineSession::new(concept, chrono::Utc::now());
        s.save_session(&session).unwrap();
        assert_eq!(s.load_session(&session.id).unwrap(), session);
        let listed = s.list_sessions(0, 10).unwrap();
        assert_eq!(listed, vec![session]);
    }

    #[test]
    fn refuses_foreign_layout() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("LAYOUT"), "something else").unwrap();
        assert!(matches!(FsStore::open(dir.path()), Err(StoreError::Layout(_))));
    }
}
