//! On-disk response cache for HTTP backends.
//!
//! When the environment variable named by [`CACHE_DIR_ENV`] is set, HTTP
//! backends persist each response under
//! `$CACHE_DIR/<scope>/<sha256(endpoint, body)>.json` and replay it on the
//! next identical request. Unset means no caching. Requests are keyed by
//! the exact serialized body, which already contains every input that can
//! influence the response (prompt/text, sampling knobs, derived seed).

use std::path::PathBuf;

use sha2::{Digest, Sha256};

/// Environment variable holding the cache root directory.
pub const CACHE_DIR_ENV: &str = "ASULAB_CACHE_DIR";

/// One backend's slice of the response cache.
pub struct HttpCache {
    dir: Option<PathBuf>,
}

impl HttpCache {
    /// Cache under `$ASULAB_CACHE_DIR/<scope>`, or a no-op when the
    /// variable is unset or empty.
    pub fn from_env(scope: &str) -> Self {
        let dir = std::env::var_os(CACHE_DIR_ENV)
            .filter(|v| !v.is_empty())
            .map(|root| PathBuf::from(root).join(scope));
        HttpCache { dir }
    }

    /// A cache that never stores anything.
    pub fn disabled() -> Self {
        HttpCache { dir: None }
    }

    pub fn is_enabled(&self) -> bool {
        self.dir.is_some()
    }

    fn path_for(&self, endpoint: &str, body: &str) -> Option<PathBuf> {
        let dir = self.dir.as_ref()?;
        let mut h = Sha256::new();
        h.update(endpoint.as_bytes());
        h.update([0u8]);
        h.update(body.as_bytes());
        Some(dir.join(format!("{}.json", hex::encode(h.finalize()))))
    }

    pub fn get(&self, endpoint: &str, body: &str) -> Option<String> {
        let path = self.path_for(endpoint, body)?;
        std::fs::read_to_string(path).ok()
    }

    pub fn put(&self, endpoint: &str, body: &str, response: &str) -> std::io::Result<()> {
        let Some(path) = self.path_for(endpoint, body) else {
            return Ok(());
        };
        let dir = path.parent().expect("cache path has a parent");
        std::fs::create_dir_all(dir)?;
        // write-then-rename so concurrent workers never see a torn file
        let tmp = path.with_extension(format!("tmp.{}", std::process::id()));
        std::fs::write(&tmp, response)?;
        std::fs::rename(&tmp, &path)?;
        Ok(())
    }
}
