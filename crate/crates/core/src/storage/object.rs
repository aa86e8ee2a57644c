//! Object stores: the payload side of the object-augmented schema.
//!
//! The bundled store is a directory tree (`hash/...`, `schema/...`) with
//! metadata sidecars `<object>.meta.json`. Puts are atomic at path
//! granularity (write to a temp file, then rename); putting identical
//! content at an existing path is a no-op.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use crate::types::ObjectReader;

use super::StorageError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PutOutcome {
    /// No object existed at the path.
    Created,
    /// An object existed with different content and was atomically replaced.
    Replaced,
    /// An identical object already existed; nothing was written.
    Identical,
}

pub trait ObjectStore: ObjectReader {
    fn put(&self, path: &str, bytes: &[u8]) -> Result<PutOutcome, StorageError>;
    fn get(&self, path: &str) -> Result<Vec<u8>, StorageError>;
    fn exists(&self, path: &str) -> Result<bool, StorageError>;
    /// Removes an object; false if it was absent.
    fn delete(&self, path: &str) -> Result<bool, StorageError>;
    /// All object paths under a prefix, sorted.
    fn list(&self, prefix: &str) -> Result<Vec<String>, StorageError>;
    /// Size in bytes of the object at `path`.
    fn size(&self, path: &str) -> Result<u64, StorageError>;
    /// Number of payload reads served so far (for laziness checks).
    fn read_count(&self) -> u64;
}

fn validate_path(path: &str) -> Result<(), StorageError> {
    let ok = !path.is_empty()
        && !path.starts_with('/')
        && path.split('/').all(|c| !c.is_empty() && c != "." && c != "..");
    if ok {
        Ok(())
    } else {
        Err(StorageError::Failure { detail: format!("invalid object path {path:?}") })
    }
}

// -- directory-backed store ----------------------------------------------------

/// Object store rooted at a local directory.
pub struct DirObjectStore {
    root: PathBuf,
    reads: AtomicU64,
    tmp_counter: AtomicU64,
}

impl DirObjectStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<DirObjectStore, StorageError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| StorageError::Failure {
            detail: format!("cannot create object store root {}: {e}", root.display()),
        })?;
        Ok(DirObjectStore { root, reads: AtomicU64::new(0), tmp_counter: AtomicU64::new(0) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn full(&self, path: &str) -> PathBuf {
        self.root.join(path)
    }

    fn io_err(&self, path: &str, e: std::io::Error) -> StorageError {
        StorageError::Failure { detail: format!("object store I/O at {path}: {e}") }
    }
}

impl ObjectReader for DirObjectStore {
    fn get_object(&self, path: &str) -> Result<Vec<u8>, String> {
        validate_path(path).map_err(|e| e.to_string())?;
        self.reads.fetch_add(1, Ordering::Relaxed);
        fs::read(self.full(path)).map_err(|e| format!("read {path}: {e}"))
    }
}

impl ObjectStore for DirObjectStore {
    fn put(&self, path: &str, bytes: &[u8]) -> Result<PutOutcome, StorageError> {
        validate_path(path)?;
        let full = self.full(path);
        let existed = match fs::read(&full) {
            Ok(existing) => {
                if existing == bytes {
                    return Ok(PutOutcome::Identical);
                }
                true
            }
            Err(_) => false,
        };
        if let Some(parent) = full.parent() {
            fs::create_dir_all(parent).map_err(|e| self.io_err(path, e))?;
        }
        let tmp = self.root.join(format!(
            ".tmp.{}.{}",
            std::process::id(),
            self.tmp_counter.fetch_add(1, Ordering::Relaxed)
        ));
        {
            let mut f = fs::File::create(&tmp).map_err(|e| self.io_err(path, e))?;
            f.write_all(bytes).map_err(|e| self.io_err(path, e))?;
        }
        fs::rename(&tmp, &full).map_err(|e| self.io_err(path, e))?;
        Ok(if existed { PutOutcome::Replaced } else { PutOutcome::Created })
    }

    fn get(&self, path: &str) -> Result<Vec<u8>, StorageError> {
        self.get_object(path).map_err(|detail| StorageError::Failure { detail })
    }

    fn exists(&self, path: &str) -> Result<bool, StorageError> {
        validate_path(path)?;
        Ok(self.full(path).is_file())
    }

    fn delete(&self, path: &str) -> Result<bool, StorageError> {
        validate_path(path)?;
        match fs::remove_file(self.full(path)) {
            Ok(()) => Ok(true),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(false),
            Err(e) => Err(self.io_err(path, e)),
        }
    }

    fn list(&self, prefix: &str) -> Result<Vec<String>, StorageError> {
        let mut out = Vec::new();
        let mut stack = vec![self.root.clone()];
        while let Some(dir) = stack.pop() {
            let entries = match fs::read_dir(&dir) {
                Ok(e) => e,
                Err(_) => continue,
            };
            for entry in entries.flatten() {
                let p = entry.path();
                let name = entry.file_name();
                let name = name.to_string_lossy();
                if name.starts_with(".tmp.") {
                    continue;
                }
                if p.is_dir() {
                    stack.push(p);
                } else if let Ok(rel) = p.strip_prefix(&self.root) {
                    let rel = rel.to_string_lossy().replace('\\', "/");
                    if rel.starts_with(prefix) {
                        out.push(rel);
                    }
                }
            }
        }
        out.sort();
        Ok(out)
    }

    fn size(&self, path: &str) -> Result<u64, StorageError> {
        validate_path(path)?;
        fs::metadata(self.full(path)).map(|m| m.len()).map_err(|e| self.io_err(path, e))
    }

    fn read_count(&self) -> u64 {
        self.reads.load(Ordering::Relaxed)
    }
}

// -- in-memory store (tests, ephemeral pipelines) -------------------------------

#[derive(Default)]
pub struct MemObjectStore {
    objects: Mutex<BTreeMap<String, Vec<u8>>>,
    reads: AtomicU64,
}

impl MemObjectStore {
    pub fn new() -> MemObjectStore {
        MemObjectStore::default()
    }
}

impl ObjectReader for MemObjectStore {
    fn get_object(&self, path: &str) -> Result<Vec<u8>, String> {
        self.reads.fetch_add(1, Ordering::Relaxed);
        self.objects
            .lock()
            .unwrap()
            .get(path)
            .cloned()
            .ok_or_else(|| format!("no object at {path}"))
    }
}

impl ObjectStore for MemObjectStore {
    fn put(&self, path: &str, bytes: &[u8]) -> Result<PutOutcome, StorageError> {
        validate_path(path)?;
        let mut map = self.objects.lock().unwrap();
        match map.get(path) {
            Some(existing) if existing == bytes => Ok(PutOutcome::Identical),
            Some(_) => {
                map.insert(path.to_string(), bytes.to_vec());
                Ok(PutOutcome::Replaced)
            }
            None => {
                map.insert(path.to_string(), bytes.to_vec());
                Ok(PutOutcome::Created)
            }
        }
    }

    fn get(&self, path: &str) -> Result<Vec<u8>, StorageError> {
        self.get_object(path).map_err(|detail| StorageError::Failure { detail })
    }

    fn exists(&self, path: &str) -> Result<bool, StorageError> {
        Ok(self.objects.lock().unwrap().contains_key(path))
    }

    fn delete(&self, path: &str) -> Result<bool, StorageError> {
        Ok(self.objects.lock().unwrap().remove(path).is_some())
    }

    fn list(&self, prefix: &str) -> Result<Vec<String>, StorageError> {
        Ok(self
            .objects
            .lock()
            .unwrap()
            .keys()
            .filter(|k| k.starts_with(prefix))
            .cloned()
            .collect())
    }

    fn size(&self, path: &str) -> Result<u64, StorageError> {
        self.objects
            .lock()
            .unwrap()
            .get(path)
            .map(|b| b.len() as u64)
            .ok_or_else(|| StorageError::Failure { detail: format!("no object at {path}") })
    }

    fn read_count(&self) -> u64 {
        self.reads.load(Ordering::Relaxed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn put_is_idempotent_for_identical_content() {
        let dir = tempfile::tempdir().unwrap();
        let store = DirObjectStore::open(dir.path()).unwrap();
        assert_eq!(store.put("hash/ab/abc", b"xyz").unwrap(), PutOutcome::Created);
        assert_eq!(store.put("hash/ab/abc", b"xyz").unwrap(), PutOutcome::Identical);
        assert_eq!(store.put("hash/ab/abc", b"other").unwrap(), PutOutcome::Replaced);
        assert_eq!(store.get("hash/ab/abc").unwrap(), b"other");
    }

    #[test]
    fn list_returns_sorted_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let store = DirObjectStore::open(dir.path()).unwrap();
        store.put("schema/s/t/a", b"1").unwrap();
        store.put("hash/ab/x", b"2").unwrap();
        store.put("hash/cd/y", b"3").unwrap();
        assert_eq!(store.list("hash/").unwrap(), vec!["hash/ab/x", "hash/cd/y"]);
        assert_eq!(store.list("").unwrap().len(), 3);
    }

    #[test]
    fn read_counter_tracks_gets() {
        let store = MemObjectStore::new();
        store.put("hash/aa/a", b"payload").unwrap();
        assert_eq!(store.read_count(), 0);
        store.get("hash/aa/a").unwrap();
        assert_eq!(store.read_count(), 1);
    }

    #[test]
    fn bad_paths_rejected() {
        let store = MemObjectStore::new();
        assert!(store.put("../evil", b"x").is_err());
        assert!(store.put("/abs", b"x").is_err());
        assert!(store.put("a//b", b"x").is_err());
    }
}
