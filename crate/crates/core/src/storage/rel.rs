//! The bundled reference relational store.
//!
//! In-memory tables with hash/btree indexes on primary keys, serializable
//! transactions via a global store lock, and durability via per-table
//! snapshot files written before a commit is acknowledged. When rooted at a
//! directory the global lock extends across processes through an advisory
//! file lock, and a version counter file lets a process reload tables that
//! another process has committed to.
//!
//! Table files: header `%table <schema>.<table> tier=<tier> ...`, the
//! rendered definition, `%rows <n>`, then one canonical JSON record per
//! row, primary-key sorted.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::os::unix::io::AsRawFd;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard};

use crate::model::{ResolvedAttr, TableDef, TableId, Tier};
use crate::types::json_to_value;
use crate::value::{canonical_json_string, sort_key, value_to_json, Row};

use super::StorageError;

fn fail(detail: impl Into<String>) -> StorageError {
    StorageError::Failure { detail: detail.into() }
}

/// A table as the store knows it: identity, resolved heading, and the
/// definition used to render snapshot headers.
#[derive(Debug, Clone)]
pub struct StoreTableMeta {
    pub id: TableId,
    pub tier: Tier,
    pub master: Option<String>,
    /// Internal tables (job tables) exist in the store but not in the
    /// schema registry.
    pub internal: bool,
    pub attrs: Vec<ResolvedAttr>,
    pub def: TableDef,
    pk_indices: Vec<usize>,
}

impl StoreTableMeta {
    pub fn new(
        id: TableId,
        tier: Tier,
        master: Option<String>,
        internal: bool,
        attrs: Vec<ResolvedAttr>,
        def: TableDef,
    ) -> StoreTableMeta {
        let pk_indices = attrs
            .iter()
            .enumerate()
            .filter(|(_, a)| a.in_pk)
            .map(|(i, _)| i)
            .collect();
        StoreTableMeta { id, tier, master, internal, attrs, def, pk_indices }
    }

    pub fn pk_key(&self, row: &Row) -> Vec<u8> {
        let vals: Vec<_> = self.pk_indices.iter().map(|i| row[*i].clone()).collect();
        sort_key(&vals)
    }

    pub fn attr_index(&self, name: &str) -> Option<usize> {
        self.attrs.iter().position(|a| a.name == name)
    }

    fn header_line(&self) -> String {
        let mut line = format!("%table {} tier={}", self.id, self.tier);
        if let Some(m) = &self.master {
            line.push_str(&format!(" master={m}"));
        }
        if self.internal {
            line.push_str(" internal");
        }
        line
    }
}

#[derive(Debug)]
struct StoreTable {
    meta: StoreTableMeta,
    rows: BTreeMap<Vec<u8>, Row>,
}

// -- transaction log ---------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TxnPhase {
    ObjectsWritten,
    TuplesCommitted,
    RolledBack,
}

impl TxnPhase {
    fn as_str(&self) -> &'static str {
        match self {
            TxnPhase::ObjectsWritten => "objects_written",
            TxnPhase::TuplesCommitted => "tuples_committed",
            TxnPhase::RolledBack => "rolled_back",
        }
    }
}

#[derive(Debug, Clone)]
pub struct TxnLogEntry {
    pub txn_id: u64,
    pub phase: TxnPhase,
    pub object_paths: Vec<String>,
}

// -- store -------------------------------------------------------------------------

struct Inner {
    tables: BTreeMap<TableId, StoreTable>,
    manifest: String,
    version: u64,
    next_txn: u64,
    txn_log: Vec<TxnLogEntry>,
}

/// The reference store. One global lock serializes transactions; shared
/// reads take the same lock briefly and clone what they need.
pub struct MemStore {
    inner: Mutex<Inner>,
    root: Option<PathBuf>,
}

impl MemStore {
    pub fn in_memory() -> MemStore {
        MemStore {
            inner: Mutex::new(Inner {
                tables: BTreeMap::new(),
                manifest: String::new(),
                version: 0,
                next_txn: 1,
                txn_log: Vec::new(),
            }),
            root: None,
        }
    }

    /// Opens (or initializes) a store rooted at a directory. The caller
    /// rebuilds the registry from the manifest, attaches table metas, and
    /// then calls [`MemStore::load_rows`].
    pub fn open(root: impl Into<PathBuf>) -> Result<MemStore, StorageError> {
        let root = root.into();
        fs::create_dir_all(root.join("tables"))
            .map_err(|e| fail(format!("cannot create store root: {e}")))?;
        let version = read_version(&root).unwrap_or(0);
        let manifest = fs::read_to_string(root.join("manifest")).unwrap_or_default();
        Ok(MemStore {
            inner: Mutex::new(Inner {
                tables: BTreeMap::new(),
                manifest,
                version,
                next_txn: 1,
                txn_log: Vec::new(),
            }),
            root: Some(root),
        })
    }

    pub fn manifest_text(&self) -> String {
        self.inner.lock().unwrap().manifest.clone()
    }

    pub fn txn_log(&self) -> Vec<TxnLogEntry> {
        self.inner.lock().unwrap().txn_log.clone()
    }

    /// Registers a table in memory without persisting (open/reload path).
    pub fn attach_table(&self, meta: StoreTableMeta) {
        let mut inner = self.inner.lock().unwrap();
        inner
            .tables
            .entry(meta.id.clone())
            .or_insert_with(|| StoreTable { meta, rows: BTreeMap::new() });
    }

    /// Reads the row sections of all attached tables from disk.
    pub fn load_rows(&self) -> Result<(), StorageError> {
        let root = match &self.root {
            Some(r) => r.clone(),
            None => return Ok(()),
        };
        let mut inner = self.inner.lock().unwrap();
        load_rows_from_disk(&mut inner, &root)
    }

    /// Creates a table (idempotent) and persists the new manifest.
    pub fn create_table(
        &self,
        meta: StoreTableMeta,
        manifest: String,
    ) -> Result<(), StorageError> {
        let mut guard = self.lock(true)?;
        if guard.inner.tables.contains_key(&meta.id) {
            return Ok(());
        }
        let id = meta.id.clone();
        guard.inner.tables.insert(id.clone(), StoreTable { meta, rows: BTreeMap::new() });
        guard.inner.manifest = manifest;
        if let Some(root) = self.root.clone() {
            persist_tables(&guard.inner, &root, &[id])?;
            let manifest_text = guard.inner.manifest.clone();
            write_atomic(&root.join("manifest"), manifest_text.as_bytes())?;
            bump_version(&mut guard.inner, &root)?;
        }
        Ok(())
    }

    /// Shared read access with a consistent snapshot for the guard's life.
    pub fn read_guard(&self) -> Result<ReadGuard<'_>, StorageError> {
        Ok(ReadGuard { guard: self.lock(false)? })
    }

    /// Begins a transaction; holds the global lock until commit/rollback.
    pub fn begin(&self) -> Result<StoreTxn<'_>, StorageError> {
        let mut guard = self.lock(true)?;
        let txn_id = guard.inner.next_txn;
        guard.inner.next_txn += 1;
        Ok(StoreTxn {
            guard: Some(guard),
            root: self.root.clone(),
            undo: BTreeMap::new(),
            dirty: BTreeSet::new(),
            object_paths: Vec::new(),
            txn_id,
            finished: false,
        })
    }

    /// The cross-worker synchronization primitive: inserts iff the primary
    /// key is absent, in one atomic step. Never blocks on the key.
    pub fn atomic_insert_unique(&self, id: &TableId, row: Row) -> Result<bool, StorageError> {
        let mut txn = self.begin()?;
        let created = txn.try_insert(id, row)?;
        if created {
            txn.commit()?;
        } else {
            txn.rollback();
        }
        Ok(created)
    }

    fn lock(&self, exclusive: bool) -> Result<Guard<'_>, StorageError> {
        let inner = self.inner.lock().unwrap();
        let lockfile = match &self.root {
            Some(root) => Some(acquire_flock(root, exclusive)?),
            None => None,
        };
        let mut guard = Guard { inner, _lockfile: lockfile };
        if let Some(root) = &self.root {
            let disk_version = read_version(root).unwrap_or(0);
            if disk_version != guard.inner.version {
                load_rows_from_disk(&mut guard.inner, root)?;
                guard.inner.version = disk_version;
            }
        }
        Ok(guard)
    }
}

struct Guard<'a> {
    inner: MutexGuard<'a, Inner>,
    _lockfile: Option<fs::File>,
}

/// Read-only view over the store, consistent while held.
pub struct ReadGuard<'a> {
    guard: Guard<'a>,
}

impl ReadGuard<'_> {
    pub fn scan(&self, id: &TableId) -> Result<Vec<Row>, StorageError> {
        let t = self
            .guard
            .inner
            .tables
            .get(id)
            .ok_or_else(|| StorageError::UnknownTable { name: id.to_string() })?;
        Ok(t.rows.values().cloned().collect())
    }

    pub fn get(&self, id: &TableId, key: &[u8]) -> Result<Option<Row>, StorageError> {
        let t = self
            .guard
            .inner
            .tables
            .get(id)
            .ok_or_else(|| StorageError::UnknownTable { name: id.to_string() })?;
        Ok(t.rows.get(key).cloned())
    }

    pub fn meta(&self, id: &TableId) -> Option<StoreTableMeta> {
        self.guard.inner.tables.get(id).map(|t| t.meta.clone())
    }

    pub fn table_ids(&self) -> Vec<TableId> {
        self.guard.inner.tables.keys().cloned().collect()
    }

    pub fn row_count(&self, id: &TableId) -> usize {
        self.guard.inner.tables.get(id).map(|t| t.rows.len()).unwrap_or(0)
    }

    /// Rendered snapshot file for one table (identical to what commit
    /// persists).
    pub fn render_table_file(&self, id: &TableId) -> Option<String> {
        self.guard.inner.tables.get(id).map(render_table_file)
    }

    pub fn manifest(&self) -> String {
        self.guard.inner.manifest.clone()
    }
}

/// A serializable transaction. Dropping without commit rolls back.
pub struct StoreTxn<'a> {
    guard: Option<Guard<'a>>,
    root: Option<PathBuf>,
    undo: BTreeMap<TableId, BTreeMap<Vec<u8>, Row>>,
    dirty: BTreeSet<TableId>,
    object_paths: Vec<String>,
    txn_id: u64,
    finished: bool,
}

impl StoreTxn<'_> {
    pub fn txn_id(&self) -> u64 {
        self.txn_id
    }

    fn inner(&self) -> &Inner {
        &self.guard.as_ref().unwrap().inner
    }

    fn inner_mut(&mut self) -> &mut Inner {
        &mut self.guard.as_mut().unwrap().inner
    }

    pub fn meta(&self, id: &TableId) -> Result<StoreTableMeta, StorageError> {
        self.inner()
            .tables
            .get(id)
            .map(|t| t.meta.clone())
            .ok_or_else(|| StorageError::UnknownTable { name: id.to_string() })
    }

    pub fn scan(&self, id: &TableId) -> Result<Vec<Row>, StorageError> {
        let t = self
            .inner()
            .tables
            .get(id)
            .ok_or_else(|| StorageError::UnknownTable { name: id.to_string() })?;
        Ok(t.rows.values().cloned().collect())
    }

    pub fn get(&self, id: &TableId, key: &[u8]) -> Result<Option<Row>, StorageError> {
        let t = self
            .inner()
            .tables
            .get(id)
            .ok_or_else(|| StorageError::UnknownTable { name: id.to_string() })?;
        Ok(t.rows.get(key).cloned())
    }

    pub fn table_ids(&self) -> Vec<TableId> {
        self.inner().tables.keys().cloned().collect()
    }

    fn touch(&mut self, id: &TableId) -> Result<(), StorageError> {
        if !self.undo.contains_key(id) {
            let t = self
                .inner()
                .tables
                .get(id)
                .ok_or_else(|| StorageError::UnknownTable { name: id.to_string() })?;
            self.undo.insert(id.clone(), t.rows.clone());
        }
        self.dirty.insert(id.clone());
        Ok(())
    }

    /// Inserts a row; the primary key must be absent.
    pub fn insert(&mut self, id: &TableId, row: Row) -> Result<(), StorageError> {
        if !self.try_insert(id, row.clone())? {
            let meta = self.meta(id)?;
            let key_desc: Vec<String> = meta
                .pk_indices
                .iter()
                .map(|i| row[*i].to_string())
                .collect();
            return Err(StorageError::DuplicatePrimaryKey {
                table: id.to_string(),
                key: key_desc.join(", "),
            });
        }
        Ok(())
    }

    /// Inserts a row unless the primary key exists; true iff inserted.
    pub fn try_insert(&mut self, id: &TableId, row: Row) -> Result<bool, StorageError> {
        let key = {
            let t = self
                .inner()
                .tables
                .get(id)
                .ok_or_else(|| StorageError::UnknownTable { name: id.to_string() })?;
            if row.len() != t.meta.attrs.len() {
                return Err(fail(format!(
                    "row arity {} does not match table {} heading of {}",
                    row.len(),
                    id,
                    t.meta.attrs.len()
                )));
            }
            let key = t.meta.pk_key(&row);
            if t.rows.contains_key(&key) {
                return Ok(false);
            }
            key
        };
        self.touch(id)?;
        self.inner_mut().tables.get_mut(id).unwrap().rows.insert(key, row);
        Ok(true)
    }

    /// Removes the row with the given primary-key encoding; true if it existed.
    pub fn delete_key(&mut self, id: &TableId, key: &[u8]) -> Result<bool, StorageError> {
        let present = self
            .inner()
            .tables
            .get(id)
            .ok_or_else(|| StorageError::UnknownTable { name: id.to_string() })?
            .rows
            .contains_key(key);
        if !present {
            return Ok(false);
        }
        self.touch(id)?;
        self.inner_mut().tables.get_mut(id).unwrap().rows.remove(key);
        Ok(true)
    }

    /// Replaces (or inserts) the row with its own primary key.
    pub fn put_row(&mut self, id: &TableId, row: Row) -> Result<(), StorageError> {
        let key = self.meta(id)?.pk_key(&row);
        self.touch(id)?;
        self.inner_mut().tables.get_mut(id).unwrap().rows.insert(key, row);
        Ok(())
    }

    /// Records the object paths written ahead of this transaction's tuples.
    pub fn log_objects_written(&mut self, paths: &[String]) {
        self.object_paths.extend_from_slice(paths);
        let entry = TxnLogEntry {
            txn_id: self.txn_id,
            phase: TxnPhase::ObjectsWritten,
            object_paths: paths.to_vec(),
        };
        append_log(&self.root, &entry);
        self.inner_mut().txn_log.push(entry);
    }

    /// Persists dirty tables, bumps the store version, releases the lock.
    pub fn commit(mut self) -> Result<(), StorageError> {
        if let Some(root) = self.root.clone() {
            let dirty: Vec<TableId> = self.dirty.iter().cloned().collect();
            if !dirty.is_empty() {
                persist_tables(self.inner(), &root, &dirty)?;
                let inner = self.inner_mut();
                bump_version(inner, &root)?;
            }
        }
        let entry = TxnLogEntry {
            txn_id: self.txn_id,
            phase: TxnPhase::TuplesCommitted,
            object_paths: std::mem::take(&mut self.object_paths),
        };
        append_log(&self.root, &entry);
        self.inner_mut().txn_log.push(entry);
        self.finished = true;
        Ok(())
    }

    /// Restores pre-images and records the rollback. The caller removes any
    /// objects it wrote before calling this.
    pub fn rollback(mut self) {
        self.do_rollback();
    }

    fn do_rollback(&mut self) {
        if self.finished {
            return;
        }
        self.finished = true;
        let undo = std::mem::take(&mut self.undo);
        let object_paths = std::mem::take(&mut self.object_paths);
        let had_work = !undo.is_empty() || !object_paths.is_empty();
        for (id, rows) in undo {
            if let Some(t) = self.inner_mut().tables.get_mut(&id) {
                t.rows = rows;
            }
        }
        if had_work {
            let entry = TxnLogEntry {
                txn_id: self.txn_id,
                phase: TxnPhase::RolledBack,
                object_paths,
            };
            append_log(&self.root, &entry);
            self.inner_mut().txn_log.push(entry);
        }
    }
}

impl Drop for StoreTxn<'_> {
    fn drop(&mut self) {
        self.do_rollback();
    }
}

// -- persistence helpers -------------------------------------------------------

fn acquire_flock(root: &Path, exclusive: bool) -> Result<fs::File, StorageError> {
    let file = fs::OpenOptions::new()
        .create(true)
        .truncate(false)
        .read(true)
        .write(true)
        .open(root.join(".lock"))
        .map_err(|e| fail(format!("cannot open lock file: {e}")))?;
    let op = if exclusive { libc::LOCK_EX } else { libc::LOCK_SH };
    loop {
        if unsafe { libc::flock(file.as_raw_fd(), op) } == 0 {
            return Ok(file);
        }
        let e = std::io::Error::last_os_error();
        if e.kind() != std::io::ErrorKind::Interrupted {
            return Err(fail(format!("flock failed: {e}")));
        }
    }
}

fn read_version(root: &Path) -> Option<u64> {
    fs::read_to_string(root.join("version")).ok()?.trim().parse().ok()
}

fn bump_version(inner: &mut Inner, root: &Path) -> Result<(), StorageError> {
    inner.version += 1;
    write_atomic(&root.join("version"), format!("{}\n", inner.version).as_bytes())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StorageError> {
    let tmp = path.with_extension(format!("tmp.{}", std::process::id()));
    {
        let mut f =
            fs::File::create(&tmp).map_err(|e| fail(format!("write {}: {e}", path.display())))?;
        f.write_all(bytes).map_err(|e| fail(format!("write {}: {e}", path.display())))?;
    }
    fs::rename(&tmp, path).map_err(|e| fail(format!("rename {}: {e}", path.display())))
}

fn table_file_path(root: &Path, id: &TableId) -> PathBuf {
    root.join("tables").join(format!("{}.{}.snap", id.schema, id.table))
}

fn persist_tables(inner: &Inner, root: &Path, ids: &[TableId]) -> Result<(), StorageError> {
    for id in ids {
        if let Some(t) = inner.tables.get(id) {
            write_atomic(&table_file_path(root, id), render_table_file(t).as_bytes())?;
        }
    }
    Ok(())
}

fn render_table_file(t: &StoreTable) -> String {
    let mut out = t.meta.header_line();
    out.push('\n');
    out.push_str(&crate::dsl::render_definition(&t.meta.def));
    out.push_str(&format!("%rows {}\n", t.rows.len()));
    for row in t.rows.values() {
        out.push_str(&row_to_json_line(&t.meta, row));
        out.push('\n');
    }
    out
}

/// Canonical JSON record for a row (sorted keys, type-directed rendering).
pub fn row_to_json_line(meta: &StoreTableMeta, row: &Row) -> String {
    let mut map = serde_json::Map::new();
    for (a, v) in meta.attrs.iter().zip(row) {
        map.insert(a.name.clone(), value_to_json(v));
    }
    canonical_json_string(&serde_json::Value::Object(map))
}

/// Parses one canonical JSON record into a heading-aligned row.
pub fn row_from_json_line(meta: &StoreTableMeta, line: &str) -> Result<Row, StorageError> {
    let parsed: serde_json::Value =
        serde_json::from_str(line).map_err(|e| fail(format!("bad row json: {e}")))?;
    let obj = parsed.as_object().ok_or_else(|| fail("row json is not an object"))?;
    let mut row = Vec::with_capacity(meta.attrs.len());
    for a in &meta.attrs {
        let j = obj.get(&a.name).unwrap_or(&serde_json::Value::Null);
        let v = json_to_value(&a.type_spec, j)
            .map_err(|e| fail(format!("attribute {}: {e}", a.name)))?;
        row.push(v);
    }
    Ok(row)
}

fn load_rows_from_disk(inner: &mut Inner, root: &Path) -> Result<(), StorageError> {
    let ids: Vec<TableId> = inner.tables.keys().cloned().collect();
    for id in ids {
        let path = table_file_path(root, &id);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(_) => continue,
        };
        let t = inner.tables.get_mut(&id).unwrap();
        let mut rows = BTreeMap::new();
        let mut in_rows = false;
        for line in text.lines() {
            if in_rows {
                if line.trim().is_empty() {
                    continue;
                }
                let row = row_from_json_line(&t.meta, line)?;
                rows.insert(t.meta.pk_key(&row), row);
            } else if line.starts_with("%rows") {
                in_rows = true;
            }
        }
        t.rows = rows;
    }
    Ok(())
}

fn append_log(root: &Option<PathBuf>, entry: &TxnLogEntry) {
    if let Some(root) = root {
        let line = serde_json::json!({
            "txn_id": entry.txn_id,
            "phase": entry.phase.as_str(),
            "objects": entry.object_paths,
        });
        if let Ok(mut f) =
            fs::OpenOptions::new().create(true).append(true).open(root.join("txn.log"))
        {
            let _ = writeln!(f, "{}", canonical_json_string(&line));
        }
    }
}
