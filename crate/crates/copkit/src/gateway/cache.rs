//! Content-addressed response cache: one file per key, filename = hex hash
//! of (provider id, instruction, image ids, decoding). Writes are atomic
//! (write-then-rename), corrupt entries are treated as misses and rewritten.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::Serialize;

use crate::util::{sha256_hex, write_atomic};

use super::{GatewayError, ModelRequest, ModelResponse, Provider};

#[derive(Serialize)]
struct CacheKeyMaterial<'a> {
    provider_id: &'a str,
    instruction: &'a str,
    image_ids: &'a [String],
    temperature: f64,
    max_output_tokens: u32,
}

/// Stable cache key for a (provider, request) pair.
pub(crate) fn cache_key(provider_id: &str, request: &ModelRequest) -> String {
    let material = CacheKeyMaterial {
        provider_id,
        instruction: &request.instruction,
        image_ids: &request.image_ids,
        temperature: request.decoding.temperature,
        max_output_tokens: request.decoding.max_output_tokens,
    };
    let bytes = serde_json::to_vec(&material).expect("key material serializes");
    sha256_hex(&bytes)
}

/// Wraps a provider with a persistent response cache. Replayed responses are
/// byte-identical and flagged `cached`.
pub struct CachedProvider {
    inner: Arc<dyn Provider>,
    dir: PathBuf,
    hits: AtomicU64,
    misses: AtomicU64,
}

/// Wraps `provider` so responses persist under `dir` and replay on key match.
pub fn with_cache(
    provider: Arc<dyn Provider>,
    dir: impl AsRef<Path>,
) -> Result<CachedProvider, GatewayError> {
    let dir = dir.as_ref().to_path_buf();
    std::fs::create_dir_all(&dir).map_err(|err| GatewayError::CacheIo {
        path: dir.clone(),
        message: err.to_string(),
    })?;
    Ok(CachedProvider {
        inner: provider,
        dir,
        hits: AtomicU64::new(0),
        misses: AtomicU64::new(0),
    })
}

impl CachedProvider {
    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::SeqCst)
    }

    fn entry_path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }
}

impl Provider for CachedProvider {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, GatewayError> {
        request.validate()?;
        let key = cache_key(self.inner.id(), request);
        let path = self.entry_path(&key);
        if let Ok(bytes) = std::fs::read(&path) {
            // A corrupt entry is a miss: re-fetch and rewrite.
            if let Ok(mut response) = serde_json::from_slice::<ModelResponse>(&bytes) {
                self.hits.fetch_add(1, Ordering::SeqCst);
                response.cached = true;
                return Ok(response);
            }
        }
        self.misses.fetch_add(1, Ordering::SeqCst);
        let response = self.inner.complete(request)?;
        let bytes = serde_json::to_vec(&response).expect("response serializes");
        write_atomic(&path, &bytes).map_err(|err| GatewayError::CacheIo {
            path: path.clone(),
            message: err.to_string(),
        })?;
        Ok(response)
    }
}
