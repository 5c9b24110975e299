//! Content-addressed blob store: `<root>/<first2>/<key>` plus an append-only
//! `<root>/index.jsonl`. Blobs are `RRC1 · sha256(payload) · payload` with
//! payload `elapsed f64le · meta_len u32le · meta · body`, published by
//! temp-file + rename.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::Serialize;
use sha2::{Digest, Sha256};

const MAGIC: &[u8; 4] = b"RRC1";
const HEADER: usize = 4 + 32;

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

#[derive(Debug)]
pub struct Cache {
    root: PathBuf,
    index_lock: Mutex<()>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    /// Wall seconds the producing node took when it was computed.
    pub elapsed: f64,
    /// Small producer-defined header (JSON by convention).
    pub meta: Vec<u8>,
    pub body: Vec<u8>,
}

/// Result of a cache lookup.
#[derive(Debug)]
pub enum Lookup {
    Hit(Blob),
    Miss,
    /// Present but failing its digest check.
    Corrupt(String),
}

#[derive(Serialize)]
struct IndexLine<'a> {
    key: &'a str,
    stage: &'a str,
    bytes: usize,
}

impl Cache {
    pub fn open(root: &Path) -> std::io::Result<Self> {
        fs::create_dir_all(root.join("tmp"))?;
        Ok(Self { root: root.to_path_buf(), index_lock: Mutex::new(()) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn blob_path(&self, key: &str) -> PathBuf {
        self.root.join(&key[..2]).join(key)
    }

    /// A fresh private scratch directory under `<root>/tmp`.
    pub fn scratch_dir(&self, label: &str) -> std::io::Result<PathBuf> {
        let n = TMP_COUNTER.fetch_add(1, Ordering::Relaxed);
        let dir = self.root.join("tmp").join(format!("{label}-{}-{n}", std::process::id()));
        fs::create_dir_all(&dir)?;
        Ok(dir)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.blob_path(key).is_file()
    }

    pub fn get(&self, key: &str) -> Lookup {
        let bytes = match fs::read(self.blob_path(key)) {
            Ok(b) => b,
            Err(_) => return Lookup::Miss,
        };
        match decode_blob(&bytes) {
            Ok(blob) => Lookup::Hit(blob),
            Err(m) => Lookup::Corrupt(m),
        }
    }

    pub fn put(&self, key: &str, stage: &str, blob: &Blob) -> std::io::Result<()> {
        let bytes = encode_blob(blob);
        let final_path = self.blob_path(key);
        fs::create_dir_all(final_path.parent().unwrap())?;
        let n = TMP_COUNTER.fetch_add(1, Ordering::Relaxed);
        let tmp = self.root.join("tmp").join(format!("{key}.{}.{n}", std::process::id()));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &final_path)?;

        let line = serde_json::to_string(&IndexLine { key, stage, bytes: bytes.len() }).expect("index line serializes");
        let _guard = self.index_lock.lock().unwrap_or_else(|e| e.into_inner());
        let mut index = OpenOptions::new().create(true).append(true).open(self.root.join("index.jsonl"))?;
        writeln!(index, "{line}")
    }
}

pub fn encode_blob(blob: &Blob) -> Vec<u8> {
    let mut payload = Vec::with_capacity(12 + blob.meta.len() + blob.body.len());
    payload.extend_from_slice(&blob.elapsed.to_le_bytes());
    payload.extend_from_slice(&(blob.meta.len() as u32).to_le_bytes());
    payload.extend_from_slice(&blob.meta);
    payload.extend_from_slice(&blob.body);
    let mut out = Vec::with_capacity(HEADER + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&Sha256::digest(&payload));
    out.extend_from_slice(&payload);
    out
}

pub fn decode_blob(bytes: &[u8]) -> Result<Blob, String> {
    if bytes.len() < HEADER + 12 || &bytes[..4] != MAGIC {
        return Err("bad header".into());
    }
    let payload = &bytes[HEADER..];
    if Sha256::digest(payload).as_slice() != &bytes[4..HEADER] {
        return Err("digest mismatch".into());
    }
    let meta_len = u32::from_le_bytes(payload[8..12].try_into().unwrap()) as usize;
    if payload.len() < 12 + meta_len {
        return Err("truncated meta".into());
    }
    Ok(Blob {
        elapsed: f64::from_le_bytes(payload[..8].try_into().unwrap()),
        meta: payload[12..12 + meta_len].to_vec(),
        body: payload[12 + meta_len..].to_vec(),
    })
}

/// Removes a cache directory after checking it looks like one.
pub fn clean_cache(root: &Path) -> std::io::Result<usize> {
    if !root.exists() {
        return Ok(0);
    }
    let looks_like_cache = root.join("index.jsonl").exists() || root.join("tmp").is_dir();
    if !looks_like_cache {
        return Err(std::io::Error::other(format!(
            "{} does not look like a cache directory (no index.jsonl)",
            root.display()
        )));
    }
    let mut removed = 0;
    for entry in fs::read_dir(root)? {
        let path = entry?.path();
        if path.is_dir() {
            removed += fs::read_dir(&path)?.count();
            fs::remove_dir_all(&path)?;
        } else {
            fs::remove_file(&path)?;
        }
    }
    Ok(removed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob(body: &[u8]) -> Blob {
        Blob { elapsed: 0.0, meta: vec![], body: body.to_vec() }
    }

    const KEY: &str = "ab0123456789abcdef0123456789abcdef0123456789abcdef0123456789abcd";

    #[test]
    fn put_get_roundtrip_and_layout() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Cache::open(dir.path()).unwrap();
        assert!(matches!(cache.get(KEY), Lookup::Miss));
        let blob = Blob { elapsed: 1.25, meta: b"{}".to_vec(), body: b"hello".to_vec() };
        cache.put(KEY, "extract", &blob).unwrap();
        assert!(dir.path().join("ab").join(KEY).is_file());
        match cache.get(KEY) {
            Lookup::Hit(b) => assert_eq!(b, blob),
            other => panic!("{other:?}"),
        }
        let index = fs::read_to_string(dir.path().join("index.jsonl")).unwrap();
        assert!(index.contains(KEY) && index.contains("\"stage\":\"extract\""));
        assert_eq!(fs::read_dir(dir.path().join("tmp")).unwrap().count(), 0);
    }

    #[test]
    fn corruption_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Cache::open(dir.path()).unwrap();
        cache.put(KEY, "train", &blob(b"payload")).unwrap();
        let path = cache.blob_path(KEY);
        let mut bytes = fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        fs::write(&path, bytes).unwrap();
        assert!(matches!(cache.get(KEY), Lookup::Corrupt(_)));
    }

    #[test]
    fn clean_refuses_foreign_directories() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("precious.txt"), "x").unwrap();
        assert!(clean_cache(dir.path()).is_err());
        let cache_dir = dir.path().join("cache");
        let cache = Cache::open(&cache_dir).unwrap();
        cache.put(KEY, "train", &blob(b"x")).unwrap();
        assert_eq!(clean_cache(&cache_dir).unwrap(), 1);
        assert!(!cache.contains(KEY));
    }
}
