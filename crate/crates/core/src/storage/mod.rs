//! The object-augmented store: relational tuples plus an object store with
//! two addressing schemes, unified under transactional insert/delete,
//! cascading deletes, and reference-scanning garbage collection.
//!
//! Inserts write objects before committing tuples; any failure removes the
//! objects written by the failed transaction and leaves no tuples visible.
//! Hash-addressed objects persist after their referencing rows are deleted
//! until `gc` proves them unreferenced; schema-addressed objects embed the
//! row's primary key in their path, are owned by exactly one row, and are
//! removed immediately after the deleting transaction commits.

pub mod object;
pub mod rel;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use std::sync::{Arc, RwLock};

use thiserror::Error;

use crate::address::{hash_path, render_path_component, sha256, AddressScheme, ObjectAddress};
use crate::algebra::{evaluate, AlgebraError, Heading, HeadingAttr, Predicate, QueryExpr, ResultSet, TableSource};
use crate::lineage::{origin_set, LineageGraph, Origin};
use crate::model::{
    parse_manifest, Attribute, AttrDefault, ModelError, RegisteredTable, ResolvedAttr,
    SchemaRegistry, TableDef, TableId, Tier,
};
use crate::populate::Make;
use crate::types::{
    encode_value, CodecRegistry, LazyRef, ObjectReader, StoredForm, TypeError, TypeSpec,
};
use crate::value::{canonical_json_string, format_datetime, value_to_json, Row, StoredObject, Value};

pub use object::{DirObjectStore, MemObjectStore, ObjectStore, PutOutcome};
pub use rel::{MemStore, ReadGuard, StoreTableMeta, StoreTxn, TxnLogEntry, TxnPhase};

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("foreign key violation in {table} row {row_index}: no {parent} row with key ({key})")]
    FkViolation { table: String, row_index: usize, parent: String, key: String },
    #[error("duplicate primary key in {table}: ({key}) exists with different values")]
    DuplicatePrimaryKey { table: String, key: String },
    #[error("type error in {table} row {row_index}: {detail}")]
    TypeMismatch { table: String, row_index: usize, detail: String },
    #[error("unknown table {name}")]
    UnknownTable { name: String },
    #[error("invalid operation: {detail}")]
    InvalidOperation { detail: String },
    #[error("storage failure: {detail}")]
    Failure { detail: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
}

/// Points where tests may inject storage failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultPoint {
    ObjectPut,
    ObjectDelete,
    TupleWrite,
    PreCommit,
}

/// Test instrumentation: returning true at a fault point makes the current
/// operation fail and roll back.
pub trait ChaosHook: Send + Sync {
    fn hit(&self, point: FaultPoint) -> bool;
}

/// Observer called after a successful commit with the primary-key encodings
/// of the rows inserted per table.
pub type CommitObserver = dyn Fn(&TableId, &[Vec<u8>]) + Send + Sync;

/// A row as callers provide it: attribute name to value.
pub type RowMap = BTreeMap<String, Value>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct InsertReport {
    pub inserted: usize,
    /// Rows identical to existing rows: skipped, by design.
    pub noop: usize,
}

#[derive(Debug, Default)]
pub struct DeleteReport {
    /// Rows removed per table (`schema.table`), including cascades.
    pub rows_removed: BTreeMap<String, usize>,
    /// Codec object references released by the removed rows.
    pub objects_released: usize,
}

impl DeleteReport {
    pub fn total_rows(&self) -> usize {
        self.rows_removed.values().sum()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GcReport {
    /// Payload objects examined.
    pub scanned: usize,
    /// Objects confirmed referenced by at least one tuple.
    pub referenced: usize,
    /// Unreferenced objects removed.
    pub deleted: usize,
}

/// Key context for schema-addressed object paths.
pub struct SchemaPathContext<'a> {
    pub schema: &'a str,
    pub table: &'a str,
    pub pk: &'a [(String, Value)],
    pub attr: &'a str,
    pub ext: &'a str,
}

/// Renders a primary-key value for a schema-addressed path.
pub fn render_pk_path_value(v: &Value) -> String {
    match v {
        Value::Str(s) => render_path_component(s),
        Value::Int(i) => i.to_string(),
        Value::Bool(b) => b.to_string(),
        Value::DateTime(us) => {
            let iso = format_datetime(*us);
            iso.replace(['-', ':'], "")
        }
        Value::Uuid(u) => crate::value::format_uuid(u),
        Value::Float(f) => render_path_component(&serde_json::json!(f).to_string()),
        other => render_path_component(&canonical_json_string(&value_to_json(other))),
    }
}

/// Path for a schema-addressed object:
/// `schema/<schema>/<table>/<pk1=v1>/.../<attr>.<ext>`.
pub fn schema_path(ctx: &SchemaPathContext<'_>) -> String {
    let mut parts = vec!["schema".to_string(), ctx.schema.to_string(), ctx.table.to_string()];
    for (name, value) in ctx.pk {
        parts.push(format!("{name}={}", render_pk_path_value(value)));
    }
    parts.push(format!("{}.{}", ctx.attr, ctx.ext));
    parts.join("/")
}

// -- the database facade ---------------------------------------------------------

/// A pipeline database: schema registry, relational store, object store,
/// codecs and make callbacks. Mutating the schema requires `&mut self`;
/// data operations synchronize internally and are safe from many threads.
pub struct Database {
    registry: SchemaRegistry,
    lineage: LineageGraph,
    store: MemStore,
    objects: Arc<dyn ObjectStore>,
    loader: Arc<dyn ObjectReader>,
    codecs: CodecRegistry,
    makes: RwLock<HashMap<TableId, Arc<dyn Make>>>,
    chaos: RwLock<Option<Arc<dyn ChaosHook>>>,
    observer: RwLock<Option<Arc<CommitObserver>>>,
}

impl Database {
    /// An ephemeral database: in-memory tuples and objects.
    pub fn in_memory() -> Database {
        let objects = Arc::new(MemObjectStore::new());
        Database {
            registry: SchemaRegistry::new(),
            lineage: LineageGraph::default(),
            store: MemStore::in_memory(),
            objects: objects.clone(),
            loader: objects,
            codecs: CodecRegistry::bundled(),
            makes: RwLock::new(HashMap::new()),
            chaos: RwLock::new(None),
            observer: RwLock::new(None),
        }
    }

    /// Opens (or initializes) a durable database. The relational store
    /// lives under `store_root`; objects under `object_root`.
    pub fn open(store_root: &Path, object_root: &Path) -> Result<Database, StorageError> {
        let objects = Arc::new(DirObjectStore::open(object_root)?);
        let store = MemStore::open(store_root)?;
        let mut db = Database {
            registry: SchemaRegistry::new(),
            lineage: LineageGraph::default(),
            store,
            objects: objects.clone(),
            loader: objects,
            codecs: CodecRegistry::bundled(),
            makes: RwLock::new(HashMap::new()),
            chaos: RwLock::new(None),
            observer: RwLock::new(None),
        };
        let manifest = db.store.manifest_text();
        if !manifest.is_empty() {
            for def in parse_manifest(&manifest).map_err(StorageError::Model)? {
                let t = db.registry.declare(def)?;
                let meta = table_meta(t);
                let job = job_table_meta(t);
                db.store.attach_table(meta);
                if let Some(job) = job {
                    db.store.attach_table(job);
                }
            }
            db.lineage = LineageGraph::build(&db.registry);
            db.store.load_rows()?;
        }
        Ok(db)
    }

    pub fn registry(&self) -> &SchemaRegistry {
        &self.registry
    }

    pub fn lineage_graph(&self) -> &LineageGraph {
        &self.lineage
    }

    pub fn codecs(&self) -> &CodecRegistry {
        &self.codecs
    }

    pub fn codecs_mut(&mut self) -> &mut CodecRegistry {
        &mut self.codecs
    }

    pub fn object_store(&self) -> &Arc<dyn ObjectStore> {
        &self.objects
    }

    pub(crate) fn store(&self) -> &MemStore {
        &self.store
    }

    pub fn set_chaos_hook(&self, hook: Option<Arc<dyn ChaosHook>>) {
        *self.chaos.write().unwrap() = hook;
    }

    pub fn set_commit_observer(&self, observer: Option<Arc<CommitObserver>>) {
        *self.observer.write().unwrap() = observer;
    }

    pub fn register_make(&self, table: &str, make: Arc<dyn Make>) -> Result<(), StorageError> {
        let id = self.registry.resolve_name(table)?.id.clone();
        self.makes.write().unwrap().insert(id, make);
        Ok(())
    }

    pub(crate) fn make_for(&self, id: &TableId) -> Option<Arc<dyn Make>> {
        self.makes.read().unwrap().get(id).cloned()
    }

    fn fault(&self, point: FaultPoint) -> bool {
        self.chaos.read().unwrap().as_ref().map_or(false, |h| h.hit(point))
    }

    /// Declares a table in the registry and the store. Re-declaring an
    /// identical definition is a no-op.
    pub fn declare_table(&mut self, def: TableDef) -> Result<(), StorageError> {
        let id = TableId::new(&def.schema_name, &def.table_name);
        if let Some(existing) = self.registry.get(&id) {
            if existing.def == def {
                return Ok(());
            }
            return Err(ModelError::TableRedefinition { table: id.to_string() }.into());
        }
        let (meta, job) = {
            let t = self.registry.declare(def)?;
            (table_meta(t), job_table_meta(t))
        };
        self.lineage = LineageGraph::build(&self.registry);
        let manifest = self.registry.manifest();
        self.store.create_table(meta, manifest.clone())?;
        if let Some(job) = job {
            self.store.create_table(job, manifest)?;
        }
        Ok(())
    }

    /// Base query expression for a table (registry tables and internal job
    /// tables alike).
    pub fn table(&self, name: &str) -> Result<QueryExpr, StorageError> {
        match self.registry.resolve_name(name) {
            Ok(t) => Ok(QueryExpr::table(t, &self.lineage)),
            Err(model_err) => {
                let guard = self.store.read_guard()?;
                let id = match name.split_once('.') {
                    Some((s, t)) => TableId::new(s, t),
                    None => {
                        let candidates: Vec<TableId> = guard
                            .table_ids()
                            .into_iter()
                            .filter(|id| id.table == name)
                            .collect();
                        match candidates.len() {
                            1 => candidates.into_iter().next().unwrap(),
                            _ => return Err(model_err.into()),
                        }
                    }
                };
                let meta =
                    guard.meta(&id).ok_or(StorageError::Model(model_err))?;
                Ok(QueryExpr::table_with_heading(id.clone(), heading_of_meta(&id, &meta.attrs)))
            }
        }
    }

    /// Evaluates a query against a consistent snapshot of the store.
    pub fn evaluate(&self, expr: &QueryExpr) -> Result<ResultSet, AlgebraError> {
        let guard = self
            .store
            .read_guard()
            .map_err(|e| AlgebraError::Storage { detail: e.to_string() })?;
        evaluate(expr, &guard)
    }

    /// A lazy reference for a stored codec value from a query result.
    pub fn lazy_ref(&self, value: &Value) -> Result<LazyRef, TypeError> {
        match value {
            Value::Object(obj) => {
                let codec_id = obj
                    .metadata
                    .get("codec")
                    .and_then(|v| v.as_str())
                    .ok_or_else(|| TypeError::CorruptPayload {
                        path: obj.address.path.clone(),
                        detail: "metadata missing codec id".into(),
                    })?;
                let version =
                    obj.metadata.get("codec_version").and_then(|v| v.as_u64()).unwrap_or(1) as u32;
                let codec = self.codecs.resolve(codec_id, version)?;
                Ok(LazyRef::new(obj.clone(), codec, self.loader.clone()))
            }
            other => Err(TypeError::TypeMismatch {
                expected: "stored object reference".into(),
                got: other.kind().into(),
            }),
        }
    }

    // -- insert -------------------------------------------------------------

    /// Inserts rows into one table in a single transaction.
    pub fn insert(&self, table: &str, rows: Vec<RowMap>) -> Result<InsertReport, StorageError> {
        let id = self.registry.resolve_name(table)?.id.clone();
        Ok(self.exec_insert(vec![(id, rows)], InsertOptions::default())?.report)
    }

    /// Inserts a master row and its part rows atomically.
    pub fn insert_group(
        &self,
        master: &str,
        master_rows: Vec<RowMap>,
        parts: Vec<(String, Vec<RowMap>)>,
    ) -> Result<InsertReport, StorageError> {
        let master_id = self.registry.resolve_name(master)?.id.clone();
        let mut batch = vec![(master_id, master_rows)];
        for (part, rows) in parts {
            batch.push((self.registry.resolve_name(&part)?.id.clone(), rows));
        }
        Ok(self.exec_insert(batch, InsertOptions::default())?.report)
    }

    pub(crate) fn exec_insert(
        &self,
        batch: Vec<(TableId, Vec<RowMap>)>,
        opts: InsertOptions,
    ) -> Result<InsertOutcome, StorageError> {
        // Stage rows and object payloads outside the lock; everything here
        // is a pure function of the inputs.
        let mut staged: Vec<(TableId, Vec<PreparedRow>)> = Vec::new();
        {
            let guard = self.store.read_guard()?;
            for (id, rows) in &batch {
                let meta = guard
                    .meta(id)
                    .ok_or_else(|| StorageError::UnknownTable { name: id.to_string() })?;
                let mut prepared = Vec::with_capacity(rows.len());
                for (i, rowmap) in rows.iter().enumerate() {
                    prepared.push(self.prepare_row(&meta, rowmap, i)?);
                }
                staged.push((id.clone(), prepared));
            }
        }

        let mut txn = self.store.begin()?;

        if let Some((target, key)) = &opts.verify_absent {
            if key_exists(&txn, target, key)? {
                // Another worker completed this key; finish bookkeeping only.
                if let Some((job, job_key)) = &opts.complete_job {
                    txn.delete_key(job, job_key)?;
                }
                txn.commit()?;
                return Ok(InsertOutcome {
                    report: InsertReport::default(),
                    already_present: true,
                    inserted_keys: Vec::new(),
                });
            }
        }

        // Filter duplicates: identical rows are no-ops, conflicting ones fail.
        let mut report = InsertReport::default();
        let mut to_insert: Vec<(TableId, PreparedRow)> = Vec::new();
        let mut batch_keys: HashSet<(TableId, Vec<u8>)> = HashSet::new();
        for (id, prepared) in staged {
            let meta = txn.meta(&id)?;
            for p in prepared {
                let key = meta.pk_key(&p.row);
                if batch_keys.contains(&(id.clone(), key.clone())) {
                    match to_insert.iter().find(|(tid, q)| *tid == id && meta.pk_key(&q.row) == key)
                    {
                        Some((_, q)) if q.row == p.row => {
                            report.noop += 1;
                            continue;
                        }
                        _ => {
                            return Err(duplicate_pk_error(&meta, &p.row));
                        }
                    }
                }
                match txn.get(&id, &key)? {
                    Some(existing) if existing == p.row => {
                        report.noop += 1;
                    }
                    Some(_) => {
                        txn.rollback();
                        return Err(duplicate_pk_error(&meta, &p.row));
                    }
                    None => {
                        batch_keys.insert((id.clone(), key));
                        to_insert.push((id.clone(), p));
                    }
                }
            }
        }

        // Foreign keys must resolve against committed rows or earlier rows
        // of this same batch (master-part groups arrive together).
        for (id, p) in &to_insert {
            if let Some(table) = self.registry.get(id) {
                let meta = txn.meta(id)?;
                for fk in &table.fks {
                    let mut vals = Vec::with_capacity(fk.map.len());
                    for (child_attr, _) in &fk.map {
                        let idx = meta.attr_index(child_attr).unwrap();
                        vals.push(p.row[idx].clone());
                    }
                    if vals.iter().any(|v| v.is_null()) {
                        continue;
                    }
                    let parent_key = crate::value::sort_key(&vals);
                    let in_batch = batch_keys.contains(&(fk.parent.clone(), parent_key.clone()));
                    if !in_batch && txn.get(&fk.parent, &parent_key)?.is_none() {
                        let key_desc: Vec<String> = vals.iter().map(|v| v.to_string()).collect();
                        txn.rollback();
                        return Err(StorageError::FkViolation {
                            table: id.to_string(),
                            row_index: p.index,
                            parent: fk.parent.to_string(),
                            key: key_desc.join(", "),
                        });
                    }
                }
            }
        }

        // Objects first, then tuples, then commit.
        let mut written: Vec<(String, PutOutcome)> = Vec::new();
        let mut payload_paths: Vec<String> = Vec::new();
        let mut seen_paths: HashSet<String> = HashSet::new();
        for (_, p) in &to_insert {
            for obj in &p.objects {
                if !seen_paths.insert(obj.path.clone()) {
                    continue;
                }
                if self.fault(FaultPoint::ObjectPut) {
                    return self.rollback_insert(txn, &written, "injected fault at object put");
                }
                match self.objects.put(&obj.path, &obj.payload) {
                    Ok(outcome) => written.push((obj.path.clone(), outcome)),
                    Err(e) => {
                        return self.rollback_insert(txn, &written, &e.to_string());
                    }
                }
                payload_paths.push(obj.path.clone());
                let sidecar = format!("{}.meta.json", obj.path);
                match self.objects.put(&sidecar, obj.sidecar.as_bytes()) {
                    Ok(outcome) => written.push((sidecar, outcome)),
                    Err(e) => {
                        return self.rollback_insert(txn, &written, &e.to_string());
                    }
                }
            }
        }
        if !payload_paths.is_empty() {
            txn.log_objects_written(&payload_paths);
        }

        let mut inserted_keys: Vec<(TableId, Vec<u8>)> = Vec::new();
        for (id, p) in &to_insert {
            if self.fault(FaultPoint::TupleWrite) {
                return self.rollback_insert(txn, &written, "injected fault at tuple write");
            }
            txn.insert(id, p.row.clone())?;
            let meta = txn.meta(id)?;
            inserted_keys.push((id.clone(), meta.pk_key(&p.row)));
            report.inserted += 1;
        }

        if let Some((job, job_key)) = &opts.complete_job {
            txn.delete_key(job, job_key)?;
        }

        if self.fault(FaultPoint::PreCommit) {
            return self.rollback_insert(txn, &written, "injected fault before commit");
        }
        txn.commit()?;

        if let Some(observer) = self.observer.read().unwrap().clone() {
            let mut per_table: BTreeMap<TableId, Vec<Vec<u8>>> = BTreeMap::new();
            for (id, key) in &inserted_keys {
                per_table.entry(id.clone()).or_default().push(key.clone());
            }
            for (id, keys) in per_table {
                observer(&id, &keys);
            }
        }

        Ok(InsertOutcome { report, already_present: false, inserted_keys })
    }

    fn rollback_insert<T>(
        &self,
        txn: StoreTxn<'_>,
        written: &[(String, PutOutcome)],
        detail: &str,
    ) -> Result<T, StorageError> {
        for (path, outcome) in written {
            if matches!(outcome, PutOutcome::Created | PutOutcome::Replaced) {
                let _ = self.objects.delete(path);
            }
        }
        txn.rollback();
        Err(StorageError::Failure { detail: detail.to_string() })
    }

    fn prepare_row(
        &self,
        meta: &StoreTableMeta,
        rowmap: &RowMap,
        index: usize,
    ) -> Result<PreparedRow, StorageError> {
        let terr = |detail: String| StorageError::TypeMismatch {
            table: meta.id.to_string(),
            row_index: index,
            detail,
        };

        for key in rowmap.keys() {
            if meta.attr_index(key).is_none() {
                return Err(terr(format!("unknown attribute {key}")));
            }
        }

        // First pass: scalars and defaults; codec values held for encoding.
        let mut row: Row = Vec::with_capacity(meta.attrs.len());
        let mut pending: Vec<(usize, Value)> = Vec::new();
        for (i, attr) in meta.attrs.iter().enumerate() {
            let provided = rowmap.get(&attr.name);
            match provided {
                Some(Value::Null) | None if attr.in_pk => {
                    return Err(terr(format!("missing primary-key attribute {}", attr.name)));
                }
                Some(Value::Null) => {
                    if attr.nullable() {
                        row.push(Value::Null);
                    } else {
                        return Err(terr(format!("attribute {} is not nullable", attr.name)));
                    }
                }
                Some(v) => {
                    if attr.type_spec.is_codec() && !matches!(v, Value::Object(_)) {
                        pending.push((i, v.clone()));
                        row.push(Value::Null); // placeholder
                    } else {
                        let conformed = attr
                            .type_spec
                            .conform(v)
                            .map_err(|e| terr(format!("attribute {}: {e}", attr.name)))?;
                        row.push(conformed);
                    }
                }
                None => match &attr.default {
                    Some(AttrDefault::Literal(v)) => {
                        let conformed = attr
                            .type_spec
                            .conform(v)
                            .map_err(|e| terr(format!("attribute {}: {e}", attr.name)))?;
                        row.push(conformed);
                    }
                    Some(AttrDefault::Null) => row.push(Value::Null),
                    None => {
                        return Err(terr(format!("missing required attribute {}", attr.name)));
                    }
                },
            }
        }

        // Second pass: encode codec values now that the key is known.
        let pk: Vec<(String, Value)> = meta
            .attrs
            .iter()
            .zip(&row)
            .filter(|(a, _)| a.in_pk)
            .map(|(a, v)| (a.name.clone(), v.clone()))
            .collect();
        let mut objects = Vec::new();
        for (i, raw) in pending {
            let attr = &meta.attrs[i];
            let form = encode_value(&attr.type_spec, &raw, &self.codecs)
                .map_err(|e| terr(format!("attribute {}: {e}", attr.name)))?;
            match form {
                StoredForm::Inline(v) => row[i] = v,
                StoredForm::Payload { payload, metadata, extension } => {
                    if payload.is_empty() {
                        return Err(terr(format!(
                            "attribute {} encoded to an empty payload",
                            attr.name
                        )));
                    }
                    let content_hash = sha256(&payload);
                    let path = match attr.type_spec.store_hint() {
                        crate::types::StoreHint::SchemaAddressed => schema_path(&SchemaPathContext {
                            schema: &meta.id.schema,
                            table: &meta.id.table,
                            pk: &pk,
                            attr: &attr.name,
                            ext: &extension,
                        }),
                        _ => hash_path(&content_hash),
                    };
                    let address = ObjectAddress {
                        scheme: match attr.type_spec.store_hint() {
                            crate::types::StoreHint::SchemaAddressed => AddressScheme::Schema,
                            _ => AddressScheme::Hash,
                        },
                        path: path.clone(),
                        content_hash,
                        size: payload.len() as u64,
                    };
                    let stored = StoredObject { address, metadata };
                    let sidecar = sidecar_json(&stored);
                    objects.push(PendingObject { path, payload, sidecar });
                    row[i] = Value::Object(stored);
                }
            }
        }

        Ok(PreparedRow { index, row, objects })
    }

    // -- delete -------------------------------------------------------------

    /// Deletes matching rows and all transitively dependent rows in one
    /// transaction, children before parents.
    pub fn delete(&self, table: &str, restriction: &Predicate) -> Result<DeleteReport, StorageError> {
        let target = self.registry.resolve_name(table)?;
        if target.def.tier == Tier::Part {
            return Err(StorageError::InvalidOperation {
                detail: format!(
                    "cannot delete directly from part table {}; delete from its master {}",
                    target.id,
                    target.def.master.as_deref().unwrap_or("?")
                ),
            });
        }
        let target_id = target.id.clone();

        let mut txn = self.store.begin()?;

        // Seed: restriction over the target, evaluated in this transaction.
        let expr = self.table(table)?.restrict(restriction.clone(), false)?;
        let seed = evaluate(&expr, &txn)?;

        let mut doomed: BTreeMap<TableId, BTreeMap<Vec<u8>, Row>> = BTreeMap::new();
        {
            let meta = txn.meta(&target_id)?;
            let mut rows = BTreeMap::new();
            for row in seed.rows {
                rows.insert(meta.pk_key(&row), row);
            }
            doomed.insert(target_id.clone(), rows);
        }

        // Propagate downward in topological order: by the time a table is
        // visited, every ancestor's doomed set is final.
        let order: Vec<TableId> = self.registry.topo_order().iter().map(|t| t.id.clone()).collect();
        for id in &order {
            let table = self.registry.get(id).unwrap();
            let mut matched: BTreeMap<Vec<u8>, Row> = BTreeMap::new();
            for fk in &table.fks {
                let Some(parent_doomed) = doomed.get(&fk.parent) else { continue };
                if parent_doomed.is_empty() {
                    continue;
                }
                let meta = txn.meta(id)?;
                let idx: Vec<usize> = fk
                    .map
                    .iter()
                    .map(|(child, _)| meta.attr_index(child).unwrap())
                    .collect();
                for row in txn.scan(id)? {
                    let vals: Vec<Value> = idx.iter().map(|i| row[*i].clone()).collect();
                    if vals.iter().any(|v| v.is_null()) {
                        continue;
                    }
                    if parent_doomed.contains_key(&crate::value::sort_key(&vals)) {
                        matched.insert(meta.pk_key(&row), row);
                    }
                }
            }
            if !matched.is_empty() {
                doomed.entry(id.clone()).or_default().extend(matched);
            }
        }

        // Remove children before parents.
        let mut report = DeleteReport::default();
        report.rows_removed.insert(target_id.to_string(), 0);
        let mut schema_objects: Vec<String> = Vec::new();
        for id in order.iter().rev() {
            let Some(rows) = doomed.get(id) else { continue };
            for (key, row) in rows {
                if txn.delete_key(id, key)? {
                    *report.rows_removed.entry(id.to_string()).or_insert(0) += 1;
                    for v in row {
                        if let Value::Object(obj) = v {
                            report.objects_released += 1;
                            if obj.address.scheme == AddressScheme::Schema {
                                schema_objects.push(obj.address.path.clone());
                            }
                        }
                    }
                }
            }
        }

        if self.fault(FaultPoint::PreCommit) {
            txn.rollback();
            return Err(StorageError::Failure { detail: "injected fault before commit".into() });
        }
        txn.commit()?;

        // Schema-addressed objects are uniquely owned: remove eagerly.
        for path in schema_objects {
            let _ = self.objects.delete(&path);
            let _ = self.objects.delete(&format!("{path}.meta.json"));
        }

        Ok(report)
    }

    // -- garbage collection ----------------------------------------------------

    /// Scans every codec-typed value across all tables, then deletes every
    /// stored object that no tuple references. Takes the exclusive store
    /// lock; idempotent.
    pub fn gc(&self) -> Result<GcReport, StorageError> {
        let txn = self.store.begin()?;

        let mut referenced: HashSet<String> = HashSet::new();
        for id in txn.table_ids() {
            for row in txn.scan(&id)? {
                for v in &row {
                    if let Value::Object(obj) = v {
                        referenced.insert(obj.address.path.clone());
                    }
                }
            }
        }

        let all = self.objects.list("")?;
        let mut report = GcReport::default();
        for path in all {
            if path.ends_with(".meta.json") {
                continue;
            }
            report.scanned += 1;
            if referenced.contains(&path) {
                report.referenced += 1;
                continue;
            }
            if self.fault(FaultPoint::ObjectDelete) {
                txn.rollback();
                return Err(StorageError::Failure { detail: "injected fault during gc".into() });
            }
            self.objects.delete(&path)?;
            let _ = self.objects.delete(&format!("{path}.meta.json"));
            report.deleted += 1;
        }

        txn.rollback(); // read-only transaction: nothing to commit
        Ok(report)
    }

    // -- objects ---------------------------------------------------------------

    /// Stores raw content under the given addressing scheme.
    pub fn put_object(
        &self,
        scheme: AddressScheme,
        content: &[u8],
        key_context: Option<&SchemaPathContext<'_>>,
    ) -> Result<ObjectAddress, StorageError> {
        if content.is_empty() {
            return Err(StorageError::Failure { detail: "empty object content".into() });
        }
        let content_hash = sha256(content);
        let path = match scheme {
            AddressScheme::Hash => hash_path(&content_hash),
            AddressScheme::Schema => {
                let ctx = key_context.ok_or_else(|| StorageError::Failure {
                    detail: "schema-addressed put requires a key context".into(),
                })?;
                schema_path(ctx)
            }
        };
        self.objects.put(&path, content)?;
        Ok(ObjectAddress { scheme, path, content_hash, size: content.len() as u64 })
    }

    // -- snapshots ---------------------------------------------------------------

    /// Deterministic byte serialization of the whole store: manifest, every
    /// table file (primary-key sorted rows), and an index of stored objects.
    pub fn snapshot_bytes(&self) -> Result<Vec<u8>, StorageError> {
        let guard = self.store.read_guard()?;
        let mut out = String::new();
        out.push_str("%manifest\n");
        out.push_str(&guard.manifest());
        for id in guard.table_ids() {
            if let Some(text) = guard.render_table_file(&id) {
                out.push_str(&text);
            }
        }
        out.push_str("%objects\n");
        for path in self.objects.list("")? {
            let size = self.objects.size(&path)?;
            out.push_str(&format!("object {path} {size}\n"));
        }
        Ok(out.into_bytes())
    }

    /// Transaction log entries recorded by this process.
    pub fn txn_log(&self) -> Vec<TxnLogEntry> {
        self.store.txn_log()
    }
}

pub(crate) struct InsertOptions {
    /// Skip all inserts if a row with this key already exists in the table.
    pub verify_absent: Option<(TableId, Vec<(String, Value)>)>,
    /// Delete this job-table row in the same transaction.
    pub complete_job: Option<(TableId, Vec<u8>)>,
}

impl Default for InsertOptions {
    fn default() -> Self {
        InsertOptions { verify_absent: None, complete_job: None }
    }
}

pub(crate) struct InsertOutcome {
    pub report: InsertReport,
    pub already_present: bool,
    #[allow(dead_code)]
    pub inserted_keys: Vec<(TableId, Vec<u8>)>,
}

struct PreparedRow {
    index: usize,
    row: Row,
    objects: Vec<PendingObject>,
}

struct PendingObject {
    path: String,
    payload: Vec<u8>,
    sidecar: String,
}

fn duplicate_pk_error(meta: &StoreTableMeta, row: &Row) -> StorageError {
    let key_desc: Vec<String> = meta
        .attrs
        .iter()
        .zip(row)
        .filter(|(a, _)| a.in_pk)
        .map(|(_, v)| v.to_string())
        .collect();
    StorageError::DuplicatePrimaryKey { table: meta.id.to_string(), key: key_desc.join(", ") }
}

/// True if any row of `table` matches all the named key values.
pub(crate) fn key_exists(
    txn: &StoreTxn<'_>,
    table: &TableId,
    key: &[(String, Value)],
) -> Result<bool, StorageError> {
    let meta = txn.meta(table)?;
    let idx: Vec<(usize, &Value)> = key
        .iter()
        .map(|(name, v)| meta.attr_index(name).map(|i| (i, v)))
        .collect::<Option<_>>()
        .ok_or_else(|| StorageError::Failure {
            detail: format!("key attribute missing from {table}"),
        })?;
    for row in txn.scan(table)? {
        if idx.iter().all(|(i, v)| row[*i] == **v) {
            return Ok(true);
        }
    }
    Ok(false)
}

fn sidecar_json(obj: &StoredObject) -> String {
    let j = serde_json::json!({
        "address": {
            "scheme": obj.address.scheme.as_str(),
            "path": obj.address.path,
            "hash": hex::encode(obj.address.content_hash),
            "size": obj.address.size,
        },
        "metadata": serde_json::Value::Object(obj.metadata.clone()),
    });
    let mut s = canonical_json_string(&j);
    s.push('\n');
    s
}

fn table_meta(t: &RegisteredTable) -> StoreTableMeta {
    StoreTableMeta::new(
        t.id.clone(),
        t.def.tier,
        t.def.master.clone(),
        false,
        t.attrs.clone(),
        t.def.clone(),
    )
}

/// Name of the coordination table for an auto-populated table.
pub fn job_table_name(target: &str) -> String {
    format!("jobs__{target}")
}

fn job_table_meta(target: &RegisteredTable) -> Option<StoreTableMeta> {
    if !target.def.tier.is_auto_populated() {
        return None;
    }
    let mk = |name: &str, spec: TypeSpec| Attribute::new(name, spec);
    let nullable_text = |name: &str| {
        let mut a = mk(name, TypeSpec::varchar(65535));
        a.default = Some(AttrDefault::Null);
        a
    };
    let def = TableDef {
        schema_name: target.id.schema.clone(),
        table_name: job_table_name(&target.id.table),
        tier: Tier::Lookup,
        comment: format!("job coordination for {}", target.id.table),
        primary_attrs: vec![mk("key_hash", TypeSpec::varchar(64))],
        secondary_attrs: vec![
            mk("key", TypeSpec::Core(crate::types::CoreType::Json)),
            mk("status", TypeSpec::varchar(16)),
            mk("worker_id", TypeSpec::varchar(128)),
            mk("reserved_at", TypeSpec::Core(crate::types::CoreType::DateTime)),
            nullable_text("error_message"),
            nullable_text("error_stack"),
        ],
        foreign_keys: vec![],
        master: None,
    };
    let attrs = resolve_standalone(&def);
    let id = TableId::new(&def.schema_name, &def.table_name);
    Some(StoreTableMeta::new(id, Tier::Lookup, None, true, attrs, def))
}

/// Resolves a definition with no foreign keys into a flat heading.
fn resolve_standalone(def: &TableDef) -> Vec<ResolvedAttr> {
    let mut attrs = Vec::new();
    for (own, in_pk) in [(&def.primary_attrs, true), (&def.secondary_attrs, false)] {
        for a in own.iter() {
            attrs.push(ResolvedAttr {
                name: a.name.clone(),
                type_spec: a.type_spec.clone(),
                default: a.default.clone(),
                comment: a.comment.clone(),
                in_pk,
                declared_here: true,
                sources: Vec::new(),
            });
        }
    }
    attrs
}

fn heading_of_meta(id: &TableId, attrs: &[ResolvedAttr]) -> Heading {
    Heading {
        attrs: attrs
            .iter()
            .map(|a| HeadingAttr {
                name: a.name.clone(),
                type_spec: a.type_spec.clone(),
                in_pk: a.in_pk,
                nullable: a.nullable(),
                origins: origin_set(Origin::declared(id, &a.name)),
            })
            .collect(),
    }
}

impl TableSource for ReadGuard<'_> {
    fn scan_table(&self, id: &TableId) -> Result<Vec<Row>, String> {
        self.scan(id).map_err(|e| e.to_string())
    }
}

impl TableSource for StoreTxn<'_> {
    fn scan_table(&self, id: &TableId) -> Result<Vec<Row>, String> {
        self.scan(id).map_err(|e| e.to_string())
    }
}
