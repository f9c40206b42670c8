//! Serialized response cache: memory first, then JSON files named by the
//! digest of the request key.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use sha2::{Digest, Sha256};
use tokio::sync::OnceCell;

use crate::error::ApiError;

#[derive(Default)]
pub struct ResponseCache {
    dir: Option<PathBuf>,
    entries: Mutex<HashMap<String, Arc<OnceCell<Bytes>>>>,
}

impl ResponseCache {
    /// Cache that also persists responses under `dir`.
    pub fn persistent(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: Some(dir.into()),
            entries: Mutex::default(),
        }
    }

    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clear(&self) {
        self.entries.lock().expect("cache lock").clear();
    }

    fn file_for(&self, key: &str) -> Option<PathBuf> {
        let digest = hex::encode(Sha256::digest(key.as_bytes()));
        self.dir.as_ref().map(|d| d.join(format!("{digest}.json")))
    }

    /// Cached bytes for `key`, computing them on a blocking thread at most
    /// once at a time. Failures are not cached.
    pub async fn get_or_compute<F>(&self, key: &str, compute: F) -> Result<Bytes, ApiError>
    where
        F: FnOnce() -> Result<Vec<u8>, ApiError> + Send + 'static,
    {
        let cell = self
            .entries
            .lock()
            .expect("cache lock")
            .entry(key.to_string())
            .or_default()
            .clone();
        let file = self.file_for(key);
        cell.get_or_try_init(|| async move {
            if let Some(path) = &file {
                if let Ok(bytes) = tokio::fs::read(path).await {
                    return Ok(Bytes::from(bytes));
                }
            }
            let bytes = tokio::task::spawn_blocking(compute)
                .await
                .map_err(|e| ApiError::internal(format!("worker failed: {e}")))??;
            if let Some(path) = &file {
                if let Err(e) = persist(path, &bytes).await {
                    log::warn!("could not persist {}: {e}", path.display());
                }
            }
            Ok(Bytes::from(bytes))
        })
        .await
        .cloned()
    }
}

async fn persist(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        tokio::fs::create_dir_all(parent).await?;
    }
    let tmp = path.with_extension("json.tmp");
    tokio::fs::write(&tmp, bytes).await?;
    tokio::fs::rename(&tmp, path).await
}
