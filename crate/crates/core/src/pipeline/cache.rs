//! Content-addressed stage outputs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::{io, Error, Result};

/// Bumped whenever a stage's output format or algorithm changes.
const CACHE_VERSION: u32 = 1;
pub const CACHE_ENV: &str = "NORI_CACHE_DIR";
const DONE: &str = ".done";

/// SHA-256 over the JSON encoding of `parts`, hex-encoded.
pub fn content_key(stage: &str, parts: &[serde_json::Value]) -> String {
    let mut h = Sha256::new();
    h.update(format!("nori-cache-v{CACHE_VERSION}\0{stage}\0"));
    for p in parts {
        h.update(serde_json::to_vec(p).expect("JSON value encodes"));
        h.update([0]);
    }
    hex::encode(h.finalize())
}

pub fn json(v: &impl Serialize) -> serde_json::Value {
    serde_json::to_value(v).expect("config serializes")
}

#[derive(Debug, Clone)]
pub struct StageCache {
    root: PathBuf,
}

impl StageCache {
    /// Cache under `$NORI_CACHE_DIR` when set, else `<out_dir>/cache`.
    pub fn new(out_dir: &Path) -> Self {
        let root = std::env::var_os(CACHE_ENV)
            .filter(|v| !v.is_empty())
            .map(PathBuf::from)
            .unwrap_or_else(|| out_dir.join("cache"));
        Self { root }
    }

    pub fn at(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn dir(&self, stage: &str, key: &str) -> PathBuf {
        self.root.join(format!("{stage}-{}", &key[..16.min(key.len())]))
    }

    pub fn is_done(&self, stage: &str, key: &str) -> bool {
        fs::read_to_string(self.dir(stage, key).join(DONE)).is_ok_and(|k| k.trim() == key)
    }

    /// Runs `produce` into a fresh stage directory unless a finished one
    /// with the same key exists. Returns whether the stage ran.
    pub fn run(&self, stage: &str, key: &str, produce: impl FnOnce(&Path) -> Result<()>) -> Result<bool> {
        if self.is_done(stage, key) {
            return Ok(false);
        }
        let dir = self.dir(stage, key);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        produce(&dir)?;
        io::write_text(&dir.join(DONE), &format!("{key}\n"))?;
        Ok(true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_track_content() {
        let a = content_key("s", &[json(&(1, "x"))]);
        assert_eq!(a, content_key("s", &[json(&(1, "x"))]));
        assert_ne!(a, content_key("s", &[json(&(2, "x"))]));
        assert_ne!(a, content_key("t", &[json(&(1, "x"))]));
        assert_eq!(a.len(), 64);
    }

    #[test]
    fn reruns_only_when_missing() {
        let d = tempfile::tempdir().unwrap();
        let c = StageCache::at(d.path());
        let key = content_key("s", &[]);
        let mut runs = 0;
        for _ in 0..2 {
            c.run("s", &key, |dir| {
                runs += 1;
                io::write_text(&dir.join("out.txt"), "x")
            })
            .unwrap();
        }
        assert_eq!(runs, 1);
        fs::remove_dir_all(c.dir("s", &key)).unwrap();
        assert!(c.run("s", &key, |dir| io::write_text(&dir.join("out.txt"), "x")).unwrap());
        // a failed stage leaves no completion marker
        let k2 = content_key("s", &[json(&1)]);
        assert!(c.run("s", &k2, |_| Err(Error::invalid("boom"))).is_err());
        assert!(!c.is_done("s", &k2));
    }
}
